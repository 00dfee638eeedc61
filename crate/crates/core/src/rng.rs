//! Seed plumbing. Every random choice in the crate draws from a named
//! substream derived from one root seed, so components (fold split, model
//! init, bank init, imputation sampling, masking) can be varied independently
//! without disturbing each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Stable 64-bit seed for the substream `label` under `root`.
pub fn mix_seed(root: u64, label: &str) -> u64 {
    let h = fnv1a(FNV_OFFSET, &root.to_le_bytes());
    fnv1a(h, label.as_bytes())
}

/// Named substream. ChaCha8 keeps the stream identical across platforms.
pub fn stream(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(root, label))
}

/// Named substream with a counter, for per-item generation (one independent
/// stream per patient, epoch, repeat, ...).
pub fn stream_indexed(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    let h = fnv1a(mix_seed(root, label), &index.to_le_bytes());
    ChaCha8Rng::seed_from_u64(h)
}
