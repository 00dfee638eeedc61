//! Cox partial-likelihood training over the full cohort at every minibatch
//! step.
//!
//! The partial likelihood is a ranking loss across risk sets, so small
//! batches see few (sometimes zero) death events. [`train`] keeps a
//! [`MemoryBank`] of the last-known score of every training patient: each
//! step refreshes the batch's entries with live predictions, evaluates the
//! loss over the *whole* cohort (live scores for the batch, stale constants
//! for everyone else), and backpropagates through the live scores only.
//! [`train_without_bank`] is the plain per-batch baseline, which must skip
//! all-censored batches.

#[cfg(test)]
mod tests;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, SurvivalOutcome};
use crate::error::{Error, Result};
use crate::imputer::{impute_map, impute_sample, LatentClassModel};
use crate::risk::{adam_step, vectorize, AdamState, RiskModel, Standardizer};
use crate::{defaults, rng};

/// Last-known risk score per training patient, randomly initialized so the
/// first steps have a full (if noisy) cohort to rank against.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    ids: Vec<String>,
    scores: Vec<f64>,
}

impl MemoryBank {
    /// One entry per cohort patient, uniform on [0, 1), seeded.
    pub fn init(cohort: &Cohort, seed: u64) -> Self {
        let mut r = rng::stream(seed, "bank-init");
        Self {
            ids: cohort
                .records
                .iter()
                .map(|rec| rec.patient_id.clone())
                .collect(),
            scores: (0..cohort.len()).map(|_| r.random::<f64>()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Scores aligned with the cohort the bank was initialized from.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn score_of(&self, patient_id: &str) -> Option<f64> {
        self.ids
            .iter()
            .position(|id| id == patient_id)
            .map(|i| self.scores[i])
    }

    fn write(&mut self, indices: &[usize], values: &[f64]) {
        debug_assert_eq!(indices.len(), values.len());
        for (&i, &v) in indices.iter().zip(values) {
            debug_assert!(v.is_finite());
            self.scores[i] = v;
        }
    }
}

/// Patients sorted by outcome time with, for each death, the start of its
/// risk set (everyone whose time is >= the death time). Tied deaths share
/// one risk set that includes each other (Breslow convention).
#[derive(Debug, Clone)]
pub struct RiskSetIndex {
    /// Patient indices sorted ascending by (time, index).
    sorted: Vec<usize>,
    /// For each death, (position in `sorted`, patient index). The risk set is
    /// the suffix of `sorted` from the first position sharing the death time.
    deaths: Vec<(usize, usize)>,
    /// First sorted position of each patient's time group.
    group_start: Vec<usize>,
    n: usize,
}

impl RiskSetIndex {
    pub fn build(outcomes: &[SurvivalOutcome]) -> Self {
        let mut sorted: Vec<usize> = (0..outcomes.len()).collect();
        sorted.sort_by(|&a, &b| {
            outcomes[a]
                .time
                .partial_cmp(&outcomes[b].time)
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut group_start = vec![0usize; sorted.len()];
        let mut start = 0usize;
        for pos in 0..sorted.len() {
            if pos > 0 && outcomes[sorted[pos]].time > outcomes[sorted[pos - 1]].time {
                start = pos;
            }
            group_start[pos] = start;
        }
        let deaths = sorted
            .iter()
            .enumerate()
            .filter(|(_, &p)| outcomes[p].event)
            .map(|(pos, &p)| (pos, p))
            .collect();
        Self {
            sorted,
            deaths,
            group_start,
            n: outcomes.len(),
        }
    }

    pub fn death_count(&self) -> usize {
        self.deaths.len()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Risk set of the `d`-th death, as patient indices.
    pub fn risk_set(&self, d: usize) -> &[usize] {
        let (pos, _) = self.deaths[d];
        &self.sorted[self.group_start[pos]..]
    }

    /// Patient index of the `d`-th death.
    pub fn death_patient(&self, d: usize) -> usize {
        self.deaths[d].1
    }
}

/// Negative mean partial log-likelihood over the index's death events,
/// with its gradient for every scored patient:
///
/// ```text
/// L = -(1/|D|) Σ_{n in D} [ g_n - log Σ_{m in R_n} exp(g_m) ]
/// ```
///
/// Log-sum-exp stabilized; returns the all-censored error when the index has
/// no deaths.
pub fn cox_loss(scores: &[f64], index: &RiskSetIndex) -> Result<(f64, Vec<f64>)> {
    if scores.len() != index.n {
        return Err(Error::Numeric(format!(
            "{} scores for an index of {} patients",
            scores.len(),
            index.n
        )));
    }
    if index.deaths.is_empty() {
        return Err(Error::AllCensored);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score at index {i}")));
    }
    let d_total = index.deaths.len() as f64;
    let n = index.n;

    // Suffix log-sum-exp per time group, walking sorted times descending.
    // lse_at[pos] = log Σ exp(g_m) over all m with time >= time(sorted[pos]).
    let mut lse_at = vec![f64::NEG_INFINITY; n];
    let mut running_max = f64::NEG_INFINITY;
    let mut running_sum = 0.0f64; // Σ exp(g - running_max)
    let mut pos = n;
    while pos > 0 {
        let group = index.group_start[pos - 1];
        for &p in &index.sorted[group..pos] {
            let g = scores[p];
            if g > running_max {
                if running_max.is_finite() {
                    running_sum *= (running_max - g).exp();
                }
                running_max = g;
            }
            running_sum += (g - running_max).exp();
        }
        let lse = running_max + running_sum.ln();
        for slot in &mut lse_at[group..pos] {
            *slot = lse;
        }
        pos = group;
    }

    let mut loss_terms = Vec::with_capacity(index.deaths.len());
    for &(dpos, patient) in &index.deaths {
        loss_terms.push(scores[patient] - lse_at[dpos]);
    }
    let loss = -crate::exec::tree_sum(&loss_terms) / d_total;

    // Gradient: dL/dg_j = -(1/|D|) [ 1(j died) - exp(g_j) · A(t_j) ] where
    // A(t) = Σ over death times u <= t of d_u · exp(-lse_u). Walk sorted
    // ascending, adding each time group's death mass before assigning A to
    // the group's members (everyone in the group belongs to those risk sets).
    // A accumulates in the log domain; g_j + log A(t_j) <= log |D| whenever
    // j belongs to the risk sets involved, so the exp cannot overflow.
    let mut grad = vec![0.0; n];
    let mut death_iter = index.deaths.iter().peekable();
    let mut cum_log_a = f64::NEG_INFINITY;
    let mut pos = 0usize;
    while pos < n {
        let group = pos;
        let mut end = pos;
        while end < n && index.group_start[end] == group {
            end += 1;
        }
        let mut group_deaths = 0.0f64;
        while let Some(&&(dpos, _)) = death_iter.peek() {
            if dpos < end {
                group_deaths += 1.0;
                death_iter.next();
            } else {
                break;
            }
        }
        if group_deaths > 0.0 {
            cum_log_a = log_add_exp(cum_log_a, group_deaths.ln() - lse_at[group]);
        }
        for &p in &index.sorted[group..end] {
            grad[p] = (scores[p] + cum_log_a).exp();
        }
        pos = end;
    }
    for &(_, patient) in &index.deaths {
        grad[patient] -= 1.0;
    }
    for g in &mut grad {
        *g /= d_total;
    }
    Ok((loss, grad))
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Softmax share of one patient within a risk set: the probability that,
/// among the members still at risk, this patient is the one who dies.
pub fn relative_death_risk(scores: &[f64], risk_set: &[usize], patient: usize) -> Result<f64> {
    if !risk_set.contains(&patient) {
        return Err(Error::Numeric(format!(
            "patient {patient} is not a member of the risk set"
        )));
    }
    let logs: Vec<f64> = risk_set.iter().map(|&m| scores[m]).collect();
    let lse = crate::imputer::log_sum_exp(&logs);
    Ok((scores[patient] - lse).exp())
}

/// How missing cells are filled when a patient enters a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainImputeMode {
    /// Fresh posterior draw at every visit (acts as data augmentation).
    Sample,
    /// Deterministic most-probable completion.
    Map,
}

/// Training configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// After this many epochs the learning rate is multiplied by
    /// `lr_decay_factor`.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub imputation_mode: TrainImputeMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: defaults::EPOCHS,
            batch_size: defaults::BATCH_SIZE,
            lr: defaults::LEARNING_RATE,
            lr_decay_epoch: defaults::LR_DECAY_EPOCH,
            lr_decay_factor: defaults::LR_DECAY_FACTOR,
            seed: 0,
            imputation_mode: TrainImputeMode::Sample,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    fn lr_for_epoch(&self, epoch: usize) -> f64 {
        if epoch > self.lr_decay_epoch {
            self.lr * self.lr_decay_factor
        } else {
            self.lr
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Full-cohort loss recomputed with all-fresh, MAP-imputed scores; the
    /// in-step bank loss mixes staleness and is not an honest monitor.
    pub fresh_loss: f64,
    pub skip_count: usize,
    /// Smallest number of death events any step's loss saw this epoch.
    pub min_step_deaths: usize,
}

/// Per-epoch training log.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub total_skips: usize,
}

impl TrainLog {
    /// Serialize as JSON lines, one record per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).unwrap());
            out.push('\n');
        }
        out
    }
}

struct StepContext<'a> {
    cohort: &'a Cohort,
    imputer: &'a LatentClassModel,
    standardizer: &'a Standardizer,
    config: &'a TrainConfig,
}

impl StepContext<'_> {
    /// Shuffled epoch order (seeded per epoch).
    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.cohort.len()).collect();
        let mut r = rng::stream_indexed(self.config.seed, "epoch-shuffle", epoch as u64);
        order.shuffle(&mut r);
        order
    }

    /// Impute and vectorize the batch members, consuming the epoch's
    /// imputation stream in batch order. Batch members are processed in
    /// ascending cohort order so the arithmetic does not depend on the
    /// shuffle's order within the batch.
    fn batch_inputs(
        &self,
        batch: &[usize],
        impute_rng: &mut impl Rng,
    ) -> Result<Vec<crate::risk::FeatureVector>> {
        batch
            .iter()
            .map(|&p| {
                let record = &self.cohort.records[p];
                let completed = match self.config.imputation_mode {
                    TrainImputeMode::Sample => impute_sample(self.imputer, record, impute_rng)?,
                    TrainImputeMode::Map => impute_map(self.imputer, record)?,
                };
                vectorize(
                    &completed,
                    &self.cohort.schema,
                    &self.cohort.binning,
                    self.standardizer,
                )
            })
            .collect()
    }

    /// Full-cohort fresh scores under deterministic MAP imputation, for the
    /// per-epoch log.
    fn fresh_scores(&self, model: &RiskModel) -> Result<Vec<f64>> {
        let inputs: Result<Vec<_>> = crate::exec::map(&self.cohort.records, |rec| {
            let completed = impute_map(self.imputer, rec)?;
            vectorize(
                &completed,
                &self.cohort.schema,
                &self.cohort.binning,
                self.standardizer,
            )
        })
        .into_iter()
        .collect();
        model.forward(&inputs?)
    }
}

fn canonical_batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    order
        .chunks(batch_size)
        .map(|chunk| {
            let mut batch = chunk.to_vec();
            batch.sort_unstable();
            batch
        })
        .collect()
}

/// Memory-bank training: every step evaluates the partial likelihood over
/// the whole cohort, with live scores for the batch and stale bank entries
/// (constants under differentiation) for everyone else.
pub fn train(
    cohort: &Cohort,
    imputer: &LatentClassModel,
    standardizer: &Standardizer,
    mut model: RiskModel,
    config: &TrainConfig,
) -> Result<(RiskModel, TrainLog)> {
    config.validate()?;
    let outcomes = cohort.outcomes()?;
    let index = RiskSetIndex::build(outcomes);
    if index.death_count() == 0 {
        return Err(Error::AllCensored);
    }
    let ctx = StepContext {
        cohort,
        imputer,
        standardizer,
        config,
    };
    let mut bank = MemoryBank::init(cohort, config.seed);
    let mut adam = AdamState::new(&model, config.lr)?;
    let mut log = TrainLog::default();

    for epoch in 1..=config.epochs {
        adam.lr = config.lr_for_epoch(epoch);
        let order = ctx.epoch_order(epoch);
        let mut impute_rng = rng::stream_indexed(config.seed, "impute", epoch as u64);

        for batch in canonical_batches(&order, config.batch_size) {
            let inputs = ctx.batch_inputs(&batch, &mut impute_rng)?;
            let (live, cache) = model.forward_cached(&inputs)?;
            bank.write(&batch, &live);
            let (_, grad_full) = cox_loss(bank.scores(), &index)?;
            // Stale entries are constants: gradients flow only through the
            // batch's live scores.
            let upstream: Vec<f64> = batch.iter().map(|&p| grad_full[p]).collect();
            let grads = model.backward(&cache, &upstream)?;
            adam_step(&mut model, &grads, &mut adam)?;
        }

        let fresh = ctx.fresh_scores(&model)?;
        let (fresh_loss, _) = cox_loss(&fresh, &index)?;
        log.epochs.push(EpochLog {
            epoch,
            lr: adam.lr,
            fresh_loss,
            skip_count: 0,
            min_step_deaths: index.death_count(),
        });
    }
    Ok((model, log))
}

/// Plain minibatch baseline: each step's loss is restricted to the batch's
/// own risk sets, and a batch with no death events cannot contribute (its
/// loss is undefined) so it is skipped and counted.
pub fn train_without_bank(
    cohort: &Cohort,
    imputer: &LatentClassModel,
    standardizer: &Standardizer,
    mut model: RiskModel,
    config: &TrainConfig,
) -> Result<(RiskModel, TrainLog)> {
    config.validate()?;
    let outcomes = cohort.outcomes()?;
    let full_index = RiskSetIndex::build(outcomes);
    if full_index.death_count() == 0 {
        return Err(Error::AllCensored);
    }
    let ctx = StepContext {
        cohort,
        imputer,
        standardizer,
        config,
    };
    let mut adam = AdamState::new(&model, config.lr)?;
    let mut log = TrainLog::default();

    for epoch in 1..=config.epochs {
        adam.lr = config.lr_for_epoch(epoch);
        let order = ctx.epoch_order(epoch);
        let mut impute_rng = rng::stream_indexed(config.seed, "impute", epoch as u64);
        let mut skips = 0usize;
        let mut min_deaths = usize::MAX;

        for batch in canonical_batches(&order, config.batch_size) {
            let inputs = ctx.batch_inputs(&batch, &mut impute_rng)?;
            let batch_outcomes: Vec<SurvivalOutcome> = batch.iter().map(|&p| outcomes[p]).collect();
            let batch_index = RiskSetIndex::build(&batch_outcomes);
            if batch_index.death_count() == 0 {
                skips += 1;
                continue;
            }
            min_deaths = min_deaths.min(batch_index.death_count());
            let (scores, cache) = model.forward_cached(&inputs)?;
            let (_, upstream) = cox_loss(&scores, &batch_index)?;
            let grads = model.backward(&cache, &upstream)?;
            adam_step(&mut model, &grads, &mut adam)?;
        }

        let fresh = ctx.fresh_scores(&model)?;
        let (fresh_loss, _) = cox_loss(&fresh, &full_index)?;
        log.total_skips += skips;
        log.epochs.push(EpochLog {
            epoch,
            lr: adam.lr,
            fresh_loss,
            skip_count: skips,
            min_step_deaths: if min_deaths == usize::MAX {
                0
            } else {
                min_deaths
            },
        });
    }
    Ok((model, log))
}
