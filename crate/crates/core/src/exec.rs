//! Data-parallel execution helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the per-item work runs on rayon;
//! without it the same loops run serially. Reductions always use a fixed
//! chunking and a fixed pairwise tree, so both builds produce bitwise
//! identical results and runs are reproducible regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk size for order-fixed reductions.
pub const CHUNK: usize = 512;

/// Order-preserving map over a slice.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(&f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Order-preserving map with the item index.
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

/// Order-preserving map over indices `0..n` (for counter-seeded generation).
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Pairwise tree sum with a fixed association order.
pub fn tree_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    tree_sum(&xs[..mid]) + tree_sum(&xs[mid..])
}

/// Σ f(item) over chunks of fixed size; chunks may evaluate in parallel but
/// the reduction tree never changes.
pub fn sum_by<T, F>(items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    let per_chunk = |chunk: &[T]| {
        let vals: Vec<f64> = chunk.iter().map(&f).collect();
        tree_sum(&vals)
    };
    let chunk_sums: Vec<f64> = {
        #[cfg(feature = "parallel")]
        {
            items.par_chunks(CHUNK).map(per_chunk).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            items.chunks(CHUNK).map(per_chunk).collect()
        }
    };
    tree_sum(&chunk_sums)
}

/// Chunked fold-and-merge. Each chunk folds serially into a fresh
/// accumulator; chunk accumulators merge in ascending chunk order, so the
/// result does not depend on scheduling. The fold closure receives the
/// item's global index.
pub fn fold_chunks<T, A, FI, FF, FM>(items: &[T], init: FI, fold: FF, merge: FM) -> A
where
    T: Sync,
    A: Send,
    FI: Fn() -> A + Sync + Send,
    FF: Fn(&mut A, usize, &T) + Sync + Send,
    FM: Fn(&mut A, A),
{
    let run_chunk = |(chunk_idx, chunk): (usize, &[T])| {
        let mut acc = init();
        for (offset, item) in chunk.iter().enumerate() {
            fold(&mut acc, chunk_idx * CHUNK + offset, item);
        }
        acc
    };
    let chunk_accs: Vec<A> = {
        #[cfg(feature = "parallel")]
        {
            items.par_chunks(CHUNK).enumerate().map(run_chunk).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            items.chunks(CHUNK).enumerate().map(run_chunk).collect()
        }
    };
    let mut out = init();
    for acc in chunk_accs {
        merge(&mut out, acc);
    }
    out
}
