//! Latent-class mixture model over discretized clinical features.
//!
//! Features are modelled as independent categorical distributions conditioned
//! on a hidden state `h`:
//!
//! ```text
//! p(x) = Σ_h p(h) Π_k p(x_k | h)
//! ```
//!
//! Dependence between features arises through the hidden state, so observing
//! some features shifts the posterior over `h`, which in turn reshapes the
//! distribution of the unobserved ones. The model trains by EM directly on
//! records with missing cells ([`fit_em`]) and exposes the exact posterior
//! over the missing part of a record ([`posterior_missing`]) for sampling,
//! MAP, and expectation imputation.

mod em;

pub use em::{e_step, e_step_with_ll, fit_em, log_likelihood, m_step, EmConfig, EmReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BinningSpec, ClinicalRecord, Cohort, FeatureSchema};
use crate::error::{Error, Result};

/// Mixture prior over hidden states plus per-feature, per-state emission
/// tables. Immutable once constructed; shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentClassModel {
    state_counts: Vec<usize>,
    prior: Vec<f64>,
    /// `emissions[k][h][c]` = p(feature k takes state c | hidden state h).
    emissions: Vec<Vec<Vec<f64>>>,
    schema_fingerprint: String,
    binning: BinningSpec,
}

const SUM_TOL: f64 = 1e-12;

impl LatentClassModel {
    pub fn new(
        schema: &FeatureSchema,
        binning: BinningSpec,
        prior: Vec<f64>,
        emissions: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        binning.validate_against(schema)?;
        let model = Self {
            state_counts: schema.state_counts(),
            prior,
            emissions,
            schema_fingerprint: schema.fingerprint(),
            binning,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.prior.is_empty() {
            return Err(Error::Schema("model has no hidden states".into()));
        }
        let h = self.prior.len();
        check_distribution("prior", &self.prior)?;
        if self.emissions.len() != self.state_counts.len() {
            return Err(Error::Schema(format!(
                "{} emission tables for {} features",
                self.emissions.len(),
                self.state_counts.len()
            )));
        }
        for (k, table) in self.emissions.iter().enumerate() {
            if table.len() != h {
                return Err(Error::Schema(format!(
                    "feature {k} has {} emission rows for {h} hidden states",
                    table.len()
                )));
            }
            for row in table {
                if row.len() != self.state_counts[k] {
                    return Err(Error::Schema(format!(
                        "feature {k} emission row has {} entries for {} states",
                        row.len(),
                        self.state_counts[k]
                    )));
                }
                check_distribution(&format!("emission row of feature {k}"), row)?;
            }
        }
        Ok(())
    }

    pub fn hidden_states(&self) -> usize {
        self.prior.len()
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn emissions(&self) -> &[Vec<Vec<f64>>] {
        &self.emissions
    }

    pub fn state_counts(&self) -> &[usize] {
        &self.state_counts
    }

    pub fn binning(&self) -> &BinningSpec {
        &self.binning
    }

    pub fn schema_fingerprint(&self) -> &str {
        &self.schema_fingerprint
    }

    pub(crate) fn check_record(&self, record: &ClinicalRecord) -> Result<()> {
        if record.states.len() != self.state_counts.len() {
            return Err(Error::Schema(format!(
                "record `{}` has {} states, model expects {}",
                record.patient_id,
                record.states.len(),
                self.state_counts.len()
            )));
        }
        for (k, s) in record.states.iter().enumerate() {
            if let Some(s) = s {
                if *s >= self.state_counts[k] {
                    return Err(Error::Schema(format!(
                        "record `{}` state {s} out of range for feature {k}",
                        record.patient_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn check_cohort(&self, cohort: &Cohort) -> Result<()> {
        if cohort.schema.state_counts() != self.state_counts {
            return Err(Error::Schema(
                "cohort schema does not match the model's feature layout".into(),
            ));
        }
        Ok(())
    }

    /// Precomputed log tables for repeated per-record posterior evaluation.
    pub fn log_tables(&self) -> LogTables {
        LogTables {
            log_prior: self.prior.iter().map(|p| p.ln()).collect(),
            log_emissions: self
                .emissions
                .iter()
                .map(|t| {
                    t.iter()
                        .map(|row| row.iter().map(|p| p.ln()).collect())
                        .collect()
                })
                .collect(),
        }
    }

    /// Posterior over hidden states given the observed part of `record`,
    /// together with the record's log-likelihood. Missing features
    /// marginalize out.
    pub fn responsibilities_with(
        &self,
        tables: &LogTables,
        record: &ClinicalRecord,
    ) -> (Vec<f64>, f64) {
        let h = self.prior.len();
        let mut logw = tables.log_prior.clone();
        for (k, state) in record.states.iter().enumerate() {
            if let Some(s) = state {
                let table = &tables.log_emissions[k];
                for (dst, row) in logw.iter_mut().zip(table) {
                    *dst += row[*s];
                }
            }
        }
        let ll = log_sum_exp(&logw);
        let mut resp = logw;
        for w in resp.iter_mut() {
            *w = (*w - ll).exp();
        }
        // Guard against drift from the exp/normalize cycle.
        let total: f64 = resp.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            for w in resp.iter_mut() {
                *w /= total;
            }
        }
        debug_assert_eq!(resp.len(), h);
        (resp, ll)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let artifact = ModelArtifact {
            schema_fingerprint: self.schema_fingerprint.clone(),
            binning: self.binning.clone(),
            hidden_states: self.prior.len(),
            prior: self.prior.clone(),
            emissions: self.emissions.clone(),
        };
        std::fs::write(path, serde_json::to_string(&artifact)?)?;
        Ok(())
    }

    /// Load a serialized model, refusing a schema whose fingerprint differs
    /// from the one the model was fitted against.
    pub fn load(path: &std::path::Path, schema: &FeatureSchema) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let artifact: ModelArtifact = serde_json::from_str(&text)?;
        let expected = schema.fingerprint();
        if artifact.schema_fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                found: artifact.schema_fingerprint,
                expected,
            });
        }
        if artifact.prior.len() != artifact.hidden_states {
            return Err(Error::Schema(
                "artifact prior length disagrees with hidden_states".into(),
            ));
        }
        Self::new(schema, artifact.binning, artifact.prior, artifact.emissions)
    }
}

/// Log-domain tables derived from a model.
pub struct LogTables {
    pub log_prior: Vec<f64>,
    pub log_emissions: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct ModelArtifact {
    schema_fingerprint: String,
    binning: BinningSpec,
    hidden_states: usize,
    prior: Vec<f64>,
    emissions: Vec<Vec<Vec<f64>>>,
}

fn check_distribution(what: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(Error::Schema(format!("{what} has a non-positive entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(Error::Schema(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-record posteriors over hidden states, one row per cohort record.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    rows: Vec<Vec<f64>>,
}

impl Responsibilities {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SUM_TOL {
                return Err(Error::Schema(format!(
                    "responsibility row {i} sums to {sum}, not 1"
                )));
            }
        }
        Ok(Self { rows })
    }

    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.rows[n]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Exact joint posterior over the missing features of one record:
/// mixture weights `p(h | x_o)` plus the per-state emission table of each
/// missing feature. Missing features are conditionally independent given `h`,
/// so this factorization is the full posterior, not an approximation.
#[derive(Debug, Clone)]
pub struct MissingPosterior {
    missing: Vec<usize>,
    weights: Vec<f64>,
    /// `tables[m][h][c]`, aligned with `missing`.
    tables: Vec<Vec<Vec<f64>>>,
}

impl MissingPosterior {
    /// Feature indices this posterior covers, in schema order.
    pub fn missing_features(&self) -> &[usize] {
        &self.missing
    }

    /// Mixture weights over hidden states given the observed features.
    pub fn mixture_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Degenerate posterior of a complete record.
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty()
    }

    /// Marginal distribution of the `m`-th missing feature.
    pub fn marginal(&self, m: usize) -> Vec<f64> {
        let table = &self.tables[m];
        let states = table[0].len();
        let mut out = vec![0.0; states];
        for (w, row) in self.weights.iter().zip(table) {
            for (o, p) in out.iter_mut().zip(row) {
                *o += w * p;
            }
        }
        out
    }

    /// Joint posterior probability of one completion (states aligned with
    /// [`Self::missing_features`]).
    pub fn joint_probability(&self, completion: &[usize]) -> f64 {
        assert_eq!(completion.len(), self.missing.len());
        self.weights
            .iter()
            .enumerate()
            .map(|(h, w)| {
                w * self
                    .tables
                    .iter()
                    .zip(completion)
                    .map(|(t, &c)| t[h][c])
                    .product::<f64>()
            })
            .sum()
    }

    /// Exact joint sample: draw `h` from the mixture weights, then each
    /// missing feature from its emission row.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let h = sample_categorical(&self.weights, rng);
        self.tables
            .iter()
            .map(|t| sample_categorical(&t[h], rng))
            .collect()
    }

    /// Highest-joint-probability completion among the per-state argmax
    /// candidates plus the per-feature marginal argmax. Exact when at most
    /// one feature is missing; a scored heuristic otherwise (the exact joint
    /// MAP is exponential in the number of missing features).
    pub fn map_completion(&self) -> Vec<usize> {
        if self.missing.is_empty() {
            return Vec::new();
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        let consider = |cand: Vec<usize>, best: &mut Option<(f64, Vec<usize>)>| {
            let p = self.joint_probability(&cand);
            match best {
                Some((bp, _)) if *bp >= p => {}
                _ => *best = Some((p, cand)),
            }
        };
        for h in 0..self.weights.len() {
            let cand: Vec<usize> = self.tables.iter().map(|t| argmax(&t[h])).collect();
            consider(cand, &mut best);
        }
        let marginal_cand: Vec<usize> = (0..self.missing.len())
            .map(|m| argmax(&self.marginal(m)))
            .collect();
        consider(marginal_cand, &mut best);
        best.unwrap().1
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn sample_categorical<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Exact posterior over the missing features of `record`, with mixture
/// weights proportional to `p(h) · p(x_o | h)`.
pub fn posterior_missing(
    model: &LatentClassModel,
    record: &ClinicalRecord,
) -> Result<MissingPosterior> {
    model.check_record(record)?;
    let tables = model.log_tables();
    let (weights, _) = model.responsibilities_with(&tables, record);
    let missing = record.missing_features();
    let tables = missing
        .iter()
        .map(|&k| model.emissions[k].clone())
        .collect();
    Ok(MissingPosterior {
        missing,
        weights,
        tables,
    })
}

/// Fill a record's missing features with one exact joint posterior draw.
/// Complete records come back unchanged without consuming randomness.
pub fn impute_sample<R: Rng>(
    model: &LatentClassModel,
    record: &ClinicalRecord,
    rng: &mut R,
) -> Result<ClinicalRecord> {
    if record.is_complete() {
        model.check_record(record)?;
        return Ok(record.clone());
    }
    let posterior = posterior_missing(model, record)?;
    let draw = posterior.sample(rng);
    Ok(fill(record, posterior.missing_features(), &draw))
}

/// Fill a record's missing features with the scored-MAP completion.
pub fn impute_map(model: &LatentClassModel, record: &ClinicalRecord) -> Result<ClinicalRecord> {
    if record.is_complete() {
        model.check_record(record)?;
        return Ok(record.clone());
    }
    let posterior = posterior_missing(model, record)?;
    let completion = posterior.map_completion();
    Ok(fill(record, posterior.missing_features(), &completion))
}

/// Point value of an expectation-imputed feature: categorical features take
/// the marginal argmax state, continuous ones the marginal expectation over
/// bin representatives.
#[derive(Debug, Clone, PartialEq)]
pub enum PointValue {
    State(usize),
    Value(f64),
}

/// Expectation imputation of one missing feature: its full posterior
/// marginal plus a point value.
#[derive(Debug, Clone)]
pub struct FeatureExpectation {
    pub feature: usize,
    pub marginal: Vec<f64>,
    pub point: PointValue,
}

/// Expectation imputation of every missing feature of `record`.
pub fn impute_expectation(
    model: &LatentClassModel,
    record: &ClinicalRecord,
) -> Result<Vec<FeatureExpectation>> {
    let posterior = posterior_missing(model, record)?;
    let mut out = Vec::with_capacity(posterior.missing_features().len());
    for (m, &k) in posterior.missing_features().iter().enumerate() {
        let marginal = posterior.marginal(m);
        let point = match model.binning.for_feature(k) {
            Some(b) => PointValue::Value(
                marginal
                    .iter()
                    .zip(&b.representatives)
                    .map(|(p, r)| p * r)
                    .sum(),
            ),
            None => PointValue::State(argmax(&marginal)),
        };
        out.push(FeatureExpectation {
            feature: k,
            marginal,
            point,
        });
    }
    Ok(out)
}

fn fill(record: &ClinicalRecord, features: &[usize], states: &[usize]) -> ClinicalRecord {
    let mut out = record.clone();
    for (&k, &s) in features.iter().zip(states) {
        out.states[k] = Some(s);
    }
    out
}

/// Per-feature constant fill: the training-set marginal mode for categorical
/// features, the training mean of bin representatives for continuous ones.
/// The independence baseline the mixture model is measured against.
#[derive(Debug, Clone)]
pub struct MeanImputer {
    fills: Vec<MeanFill>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeanFill {
    Mode(usize),
    Mean { value: f64, state: usize },
}

impl MeanImputer {
    pub fn fit(cohort: &Cohort) -> Result<Self> {
        let counts_per_feature = cohort.schema.state_counts();
        let mut fills = Vec::with_capacity(counts_per_feature.len());
        for (k, &states) in counts_per_feature.iter().enumerate() {
            let mut counts = vec![0usize; states];
            for rec in &cohort.records {
                if let Some(s) = rec.states[k] {
                    counts[s] += 1;
                }
            }
            let total: usize = counts.iter().sum();
            if total == 0 {
                return Err(Error::Schema(format!(
                    "feature `{}` is never observed in the training cohort",
                    cohort.schema.feature(k).name
                )));
            }
            let fill = match cohort.binning.for_feature(k) {
                None => {
                    let mode = counts
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                        .map(|(i, _)| i)
                        .unwrap();
                    MeanFill::Mode(mode)
                }
                Some(b) => {
                    let value = counts
                        .iter()
                        .zip(&b.representatives)
                        .map(|(&c, &r)| c as f64 * r)
                        .sum::<f64>()
                        / total as f64;
                    MeanFill::Mean {
                        value,
                        state: crate::data::discretize_value(value, &b.edges),
                    }
                }
            };
            fills.push(fill);
        }
        Ok(Self { fills })
    }

    pub fn fill_for(&self, feature: usize) -> &MeanFill {
        &self.fills[feature]
    }

    pub fn fill_record(&self, record: &ClinicalRecord) -> ClinicalRecord {
        let mut out = record.clone();
        for (k, state) in out.states.iter_mut().enumerate() {
            if state.is_none() {
                *state = Some(match &self.fills[k] {
                    MeanFill::Mode(s) => *s,
                    MeanFill::Mean { state, .. } => *state,
                });
            }
        }
        out
    }
}
