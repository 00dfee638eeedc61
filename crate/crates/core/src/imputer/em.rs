//! EM fitting of the latent-class model on cohorts with missing cells.
//!
//! E-step and likelihood run in the log domain (a 90-state model multiplies
//! many small probabilities). Per-record work is data-parallel with a fixed
//! reduction order, so fits are bit-identical across serial and parallel
//! builds.

use rand::Rng;

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::exec;
use crate::imputer::{LatentClassModel, Responsibilities};
use crate::{defaults, rng};

/// EM fitting configuration.
#[derive(Debug, Clone, Copy)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when the relative change of the mean per-record log-likelihood
    /// falls below this.
    pub rel_tol: f64,
    /// Additive pseudocount per category in every M-step normalization;
    /// keeps every probability strictly positive so no unseen test
    /// combination becomes impossible.
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: defaults::EM_MAX_ITERS,
            rel_tol: defaults::EM_REL_TOL,
            smoothing: defaults::EM_SMOOTHING,
            seed: 0,
        }
    }
}

/// Fit summary.
#[derive(Debug, Clone)]
pub struct EmReport {
    /// M-steps applied.
    pub iterations: usize,
    pub converged: bool,
    /// Mean per-record log-likelihood of the model after each M-step
    /// (entry 0 is the initial model); the last entry belongs to the
    /// returned model.
    pub mean_ll_history: Vec<f64>,
    pub final_mean_log_likelihood: f64,
    pub warnings: Vec<String>,
}

/// Total log-likelihood of the cohort under the model, using observed
/// entries only. A fully missing record contributes `log Σ_h p(h) = 0`.
pub fn log_likelihood(model: &LatentClassModel, cohort: &Cohort) -> Result<f64> {
    model.check_cohort(cohort)?;
    let tables = model.log_tables();
    let lls = exec::map(&cohort.records, |rec| {
        model.responsibilities_with(&tables, rec).1
    });
    Ok(exec::tree_sum(&lls))
}

/// Posterior over hidden states for every record, from observed features
/// only (missing features marginalize out).
pub fn e_step(model: &LatentClassModel, cohort: &Cohort) -> Result<Responsibilities> {
    Ok(e_step_with_ll(model, cohort)?.0)
}

/// E-step together with the total log-likelihood it computes for free.
pub fn e_step_with_ll(
    model: &LatentClassModel,
    cohort: &Cohort,
) -> Result<(Responsibilities, f64)> {
    model.check_cohort(cohort)?;
    let tables = model.log_tables();
    let per: Vec<(Vec<f64>, f64)> = exec::map(&cohort.records, |rec| {
        model.responsibilities_with(&tables, rec)
    });
    let lls: Vec<f64> = per.iter().map(|(_, ll)| *ll).collect();
    let total = exec::tree_sum(&lls);
    let rows = per.into_iter().map(|(r, _)| r).collect();
    Ok((Responsibilities::from_rows_unchecked(rows), total))
}

struct Accumulator {
    prior: Vec<f64>,
    emissions: Vec<Vec<Vec<f64>>>,
}

/// One M-step. Observed cells add their responsibility to the observed
/// category's count; a missing cell spreads its responsibility over the
/// categories according to the current emissions (missing features are
/// conditionally independent given `h`, so
/// `q(x_k = c, h | x) = q(h | x) · p_old(c | h)`).
pub fn m_step(
    model: &LatentClassModel,
    cohort: &Cohort,
    responsibilities: &Responsibilities,
    smoothing: f64,
) -> Result<LatentClassModel> {
    model.check_cohort(cohort)?;
    if responsibilities.len() != cohort.len() {
        return Err(Error::Schema(format!(
            "{} responsibility rows for {} records",
            responsibilities.len(),
            cohort.len()
        )));
    }
    let h = model.hidden_states();
    let counts = model.state_counts().to_vec();
    let old = model.emissions();

    let init = || Accumulator {
        prior: vec![0.0; h],
        emissions: counts.iter().map(|&c| vec![vec![0.0; c]; h]).collect(),
    };
    let acc = exec::fold_chunks(
        &cohort.records,
        init,
        |acc, n, rec| {
            let q = responsibilities.row(n);
            for (dst, &qh) in acc.prior.iter_mut().zip(q) {
                *dst += qh;
            }
            for (k, state) in rec.states.iter().enumerate() {
                let table = &mut acc.emissions[k];
                match state {
                    Some(s) => {
                        for (row, &qh) in table.iter_mut().zip(q) {
                            row[*s] += qh;
                        }
                    }
                    None => {
                        for ((row, old_row), &qh) in table.iter_mut().zip(&old[k]).zip(q) {
                            for (dst, &p) in row.iter_mut().zip(old_row) {
                                *dst += qh * p;
                            }
                        }
                    }
                }
            }
        },
        |into, other| {
            for (a, b) in into.prior.iter_mut().zip(other.prior) {
                *a += b;
            }
            for (ta, tb) in into.emissions.iter_mut().zip(other.emissions) {
                for (ra, rb) in ta.iter_mut().zip(tb) {
                    for (a, b) in ra.iter_mut().zip(rb) {
                        *a += b;
                    }
                }
            }
        },
    );

    let prior = normalize_with(&acc.prior, smoothing);
    let emissions = acc
        .emissions
        .into_iter()
        .map(|table| {
            table
                .iter()
                .map(|row| normalize_with(row, smoothing))
                .collect()
        })
        .collect();
    LatentClassModel::from_parts(model, prior, emissions)
}

fn normalize_with(counts: &[f64], smoothing: f64) -> Vec<f64> {
    let total: f64 = counts.iter().sum::<f64>() + smoothing * counts.len() as f64;
    counts.iter().map(|&c| (c + smoothing) / total).collect()
}

impl LatentClassModel {
    /// Rebuild with new parameters, keeping layout, fingerprint, and binning.
    fn from_parts(
        like: &LatentClassModel,
        prior: Vec<f64>,
        emissions: Vec<Vec<Vec<f64>>>,
    ) -> Result<LatentClassModel> {
        let model = LatentClassModel {
            state_counts: like.state_counts.clone(),
            prior,
            emissions,
            schema_fingerprint: like.schema_fingerprint.clone(),
            binning: like.binning.clone(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Initial model: uniform prior; emissions are the empirical marginals
    /// perturbed by seeded multiplicative noise in [0.9, 1.1] to break the
    /// symmetry between hidden states.
    fn init_for_fit(
        cohort: &Cohort,
        h: usize,
        smoothing: f64,
        seed: u64,
    ) -> Result<LatentClassModel> {
        let counts_per_feature = cohort.schema.state_counts();
        let mut noise = rng::stream(seed, "em-init");
        let mut emissions = Vec::with_capacity(counts_per_feature.len());
        for (k, &states) in counts_per_feature.iter().enumerate() {
            let mut counts = vec![0.0f64; states];
            for rec in &cohort.records {
                if let Some(s) = rec.states[k] {
                    counts[s] += 1.0;
                }
            }
            let marginal = normalize_with(&counts, smoothing.max(1e-9));
            let mut table = Vec::with_capacity(h);
            for _ in 0..h {
                let perturbed: Vec<f64> = marginal
                    .iter()
                    .map(|&p| p * (0.9 + 0.2 * noise.random::<f64>()))
                    .collect();
                let total: f64 = perturbed.iter().sum();
                table.push(perturbed.into_iter().map(|p| p / total).collect());
            }
            emissions.push(table);
        }
        let prior = vec![1.0 / h as f64; h];
        LatentClassModel::new(&cohort.schema, cohort.binning.clone(), prior, emissions)
    }
}

/// Fit a latent-class model with `h` hidden states by EM.
///
/// Alternates E and M steps until the relative change of the mean per-record
/// log-likelihood drops below `rel_tol` or `max_iters` M-steps have run.
/// Deterministic given the seed.
pub fn fit_em(
    cohort: &Cohort,
    h: usize,
    config: &EmConfig,
) -> Result<(LatentClassModel, EmReport)> {
    if h == 0 {
        return Err(Error::Config(
            "at least one hidden state is required".into(),
        ));
    }
    if cohort.is_empty() {
        return Err(Error::Config("cannot fit on an empty cohort".into()));
    }
    let mut warnings = Vec::new();
    if h > cohort.len() {
        warnings.push(format!(
            "{h} hidden states exceed the {} training records; fitting anyway",
            cohort.len()
        ));
    }

    let n = cohort.len() as f64;
    let mut model = LatentClassModel::init_for_fit(cohort, h, config.smoothing, config.seed)?;
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0usize;

    loop {
        let (resp, total) = e_step_with_ll(&model, cohort)?;
        let mean = total / n;
        let prev = history.last().copied();
        history.push(mean);
        if let Some(p) = prev {
            if (mean - p).abs() <= config.rel_tol * p.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if iterations >= config.max_iters {
            break;
        }
        model = m_step(&model, cohort, &resp, config.smoothing)?;
        iterations += 1;
    }

    let final_mean = *history.last().unwrap();
    Ok((
        model,
        EmReport {
            iterations,
            converged,
            mean_ll_history: history,
            final_mean_log_likelihood: final_mean,
            warnings,
        },
    ))
}
