//! Trainable risk function `g(x)`: a linear model or a small ReLU network
//! scoring each patient's feature vector, with exact gradients and an Adam
//! optimizer ([`adam_step`]).
//!
//! Records enter as one-hot expansions of categorical states concatenated
//! with standardized continuous representatives ([`vectorize`]).

mod adam;

pub use adam::{adam_step, AdamState};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BinningSpec, ClinicalRecord, Cohort, FeatureSchema};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng;

/// Dense input row for the risk model.
pub type FeatureVector = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdStat {
    pub mean: f64,
    pub std: f64,
}

/// Per-feature standardization statistics, fitted on training records only.
/// Categorical features carry no entry; a continuous feature with zero
/// training variance is flagged and its coordinate is emitted as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    stats: Vec<Option<StdStat>>,
}

impl Standardizer {
    /// Fit from the observed continuous representatives of a cohort.
    pub fn fit(cohort: &Cohort) -> Self {
        let stats = (0..cohort.schema.feature_count())
            .map(|k| {
                let binning = cohort.binning.for_feature(k)?;
                let values: Vec<f64> = cohort
                    .records
                    .iter()
                    .filter_map(|r| r.states[k].map(|s| binning.representatives[s]))
                    .collect();
                if values.is_empty() {
                    return Some(StdStat {
                        mean: 0.0,
                        std: 0.0,
                    });
                }
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                Some(StdStat {
                    mean,
                    std: var.sqrt(),
                })
            })
            .collect();
        Self { stats }
    }

    pub fn stat_for(&self, feature: usize) -> Option<&StdStat> {
        self.stats.get(feature).and_then(|s| s.as_ref())
    }

    /// Features whose training variance was zero (their standardized
    /// coordinate is always 0).
    pub fn degenerate_features(&self) -> Vec<usize> {
        self.stats
            .iter()
            .enumerate()
            .filter_map(|(i, s)| matches!(s, Some(st) if st.std == 0.0).then_some(i))
            .collect()
    }
}

/// Width of the vectorized representation under a schema: one slot per
/// category of each categorical feature, one per continuous feature.
pub fn input_width(schema: &FeatureSchema) -> usize {
    schema
        .features()
        .iter()
        .map(|f| {
            if f.is_continuous() {
                1
            } else {
                f.state_count()
            }
        })
        .sum()
}

/// Vectorize a complete record: categorical states one-hot, continuous
/// states to their standardized representative. Errors if any state is
/// missing (imputation must run first).
pub fn vectorize(
    record: &ClinicalRecord,
    schema: &FeatureSchema,
    binning: &BinningSpec,
    standardizer: &Standardizer,
) -> Result<FeatureVector> {
    let mut out = Vec::with_capacity(input_width(schema));
    for (k, feature) in schema.features().iter().enumerate() {
        let state = record.states[k].ok_or_else(|| {
            Error::Schema(format!(
                "record `{}` still has feature `{}` missing; impute before vectorizing",
                record.patient_id, feature.name
            ))
        })?;
        match binning.for_feature(k) {
            None => {
                let card = feature.state_count();
                for c in 0..card {
                    out.push(if c == state { 1.0 } else { 0.0 });
                }
            }
            Some(b) => {
                let rep = b.representatives[state];
                let stat = standardizer.stat_for(k).ok_or_else(|| {
                    Error::Schema(format!(
                        "no standardization stats for feature `{}`",
                        feature.name
                    ))
                })?;
                out.push(if stat.std > 0.0 {
                    (rep - stat.mean) / stat.std
                } else {
                    0.0
                });
            }
        }
    }
    debug_assert!(out.iter().all(|v| v.is_finite()));
    Ok(out)
}

/// Vectorize a whole cohort of complete records.
pub fn vectorize_cohort(
    cohort: &Cohort,
    standardizer: &Standardizer,
) -> Result<Vec<FeatureVector>> {
    let vectors = exec::map(&cohort.records, |rec| {
        vectorize(rec, &cohort.schema, &cohort.binning, standardizer)
    });
    vectors.into_iter().collect()
}

/// Risk model architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    Mlp { hidden: Vec<usize> },
}

/// One dense layer, row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let z: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + self.bias[r];
            out.push(z);
        }
    }
}

/// Trainable scalar risk function. Forward output is one real per input;
/// the Cox loss depends only on differences of these scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskModel {
    architecture: Architecture,
    layers: Vec<DenseLayer>,
    input_width: usize,
    /// Bumped on every parameter update; forward caches bind to it.
    version: u64,
}

impl RiskModel {
    /// Fresh model with uniform fan-in initialization, seeded.
    pub fn new(architecture: Architecture, input_width: usize, seed: u64) -> Result<Self> {
        if input_width == 0 {
            return Err(Error::Config("input width must be positive".into()));
        }
        let mut dims = vec![input_width];
        match &architecture {
            Architecture::Linear => {}
            Architecture::Mlp { hidden } => {
                if hidden.contains(&0) {
                    return Err(Error::Config("hidden widths must be positive".into()));
                }
                dims.extend(hidden.iter().copied());
            }
        }
        dims.push(1);

        let mut rng = rng::stream(seed, "risk-init");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let bound = 1.0 / (cols as f64).sqrt();
                let mut draw = || rng.random::<f64>() * 2.0 * bound - bound;
                DenseLayer {
                    weights: (0..rows * cols).map(|_| draw()).collect(),
                    rows,
                    cols,
                    bias: (0..rows).map(|_| draw()).collect(),
                }
            })
            .collect();
        Ok(Self {
            architecture,
            layers,
            input_width,
            version: 0,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable parameter access (optimizers, perturbation tests). Any
    /// access invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut Vec<DenseLayer> {
        self.version += 1;
        &mut self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn score_one(&self, input: &[f64], keep: Option<&mut Vec<Vec<f64>>>) -> f64 {
        let last = self.layers.len() - 1;
        let mut current = input.to_vec();
        let mut pre = Vec::new();
        let mut kept: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&current, &mut pre);
            if keep.is_some() {
                kept.push(pre.clone());
            }
            if l < last {
                current.clear();
                current.extend(pre.iter().map(|&z| z.max(0.0)));
            }
        }
        if let Some(slot) = keep {
            *slot = kept;
        }
        pre[0]
    }

    /// Risk scores for a batch. Deterministic; no state is recorded.
    pub fn forward(&self, inputs: &[FeatureVector]) -> Result<Vec<f64>> {
        self.check_widths(inputs)?;
        Ok(exec::map(inputs, |x| self.score_one(x, None)))
    }

    /// Forward pass that records the activations needed for [`Self::backward`].
    pub fn forward_cached(&self, inputs: &[FeatureVector]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_widths(inputs)?;
        let per: Vec<(f64, Vec<Vec<f64>>)> = exec::map(inputs, |x| {
            let mut pre = Vec::new();
            let score = self.score_one(x, Some(&mut pre));
            (score, pre)
        });
        let mut scores = Vec::with_capacity(per.len());
        let mut pre_acts = Vec::with_capacity(per.len());
        for (s, p) in per {
            scores.push(s);
            pre_acts.push(p);
        }
        Ok((
            scores.clone(),
            ForwardCache {
                version: self.version,
                inputs: inputs.to_vec(),
                pre_activations: pre_acts,
            },
        ))
    }

    /// Exact gradients of `Σ_i upstream[i] · g(x_i)` with respect to every
    /// parameter. The ReLU subgradient at 0 is taken as 0. Fails if the
    /// model changed since the forward pass that produced `cache`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::Numeric(
                "stale forward cache: parameters changed since the forward pass".into(),
            ));
        }
        if upstream.len() != cache.inputs.len() {
            return Err(Error::Numeric(format!(
                "{} upstream gradients for a batch of {}",
                upstream.len(),
                cache.inputs.len()
            )));
        }
        let indices: Vec<usize> = (0..cache.inputs.len()).collect();
        let grads = exec::fold_chunks(
            &indices,
            || Gradients::zeros_like(self),
            |acc, _, &i| {
                self.accumulate_one(
                    acc,
                    &cache.inputs[i],
                    &cache.pre_activations[i],
                    upstream[i],
                )
            },
            |into, other| into.add_assign(other),
        );
        Ok(grads)
    }

    fn accumulate_one(&self, acc: &mut Gradients, input: &[f64], pre: &[Vec<f64>], upstream: f64) {
        let last = self.layers.len() - 1;
        // delta over the output of each layer, walked backwards.
        let mut delta = vec![upstream];
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let layer_input: Vec<f64> = if l == 0 {
                input.to_vec()
            } else {
                pre[l - 1].iter().map(|&z| z.max(0.0)).collect()
            };
            let g = &mut acc.layers[l];
            for (r, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = &mut g.weights[r * layer.cols..(r + 1) * layer.cols];
                    for (slot, x) in row.iter_mut().zip(&layer_input) {
                        *slot += d * x;
                    }
                }
                g.bias[r] += d;
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.cols];
                for (r, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                }
                for (p, &z) in prev.iter_mut().zip(&pre[l - 1]) {
                    if z <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    fn check_widths(&self, inputs: &[FeatureVector]) -> Result<()> {
        for x in inputs {
            if x.len() != self.input_width {
                return Err(Error::Schema(format!(
                    "input width {} does not match model width {}",
                    x.len(),
                    self.input_width
                )));
            }
        }
        Ok(())
    }

    pub fn to_artifact(
        &self,
        standardizer: &Standardizer,
        schema: &FeatureSchema,
        binning: &BinningSpec,
    ) -> RiskArtifact {
        RiskArtifact {
            schema_fingerprint: schema.fingerprint(),
            binning_digest: binning.digest(),
            architecture: self.architecture.clone(),
            input_width: self.input_width,
            layers: self.layers.clone(),
            standardizer: standardizer.clone(),
            baseline_hazard: None,
            censoring_km: None,
        }
    }
}

/// Activations recorded by [`RiskModel::forward_cached`].
pub struct ForwardCache {
    version: u64,
    inputs: Vec<FeatureVector>,
    pre_activations: Vec<Vec<Vec<f64>>>,
}

impl ForwardCache {
    pub fn batch_len(&self) -> usize {
        self.inputs.len()
    }
}

/// Parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &RiskModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    fn add_assign(&mut self, other: Gradients) {
        for (a, b) in self.layers.iter_mut().zip(other.layers) {
            for (x, y) in a.weights.iter_mut().zip(b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(b.bias) {
                *x += y;
            }
        }
    }
}

/// Serialized risk model bundle: parameters, standardization stats, and the
/// training-derived curves later stages need (so evaluation never touches
/// training data again).
#[derive(Serialize, Deserialize)]
pub struct RiskArtifact {
    pub schema_fingerprint: String,
    pub binning_digest: String,
    pub architecture: Architecture,
    pub input_width: usize,
    pub layers: Vec<DenseLayer>,
    pub standardizer: Standardizer,
    pub baseline_hazard: Option<crate::metrics::CumulativeHazard>,
    pub censoring_km: Option<crate::metrics::SurvivalCurve>,
}

impl RiskArtifact {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path, schema: &FeatureSchema) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let artifact: RiskArtifact = serde_json::from_str(&text)?;
        let expected = schema.fingerprint();
        if artifact.schema_fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                found: artifact.schema_fingerprint,
                expected,
            });
        }
        Ok(artifact)
    }

    pub fn to_model(&self) -> Result<RiskModel> {
        for layer in &self.layers {
            if layer.weights.len() != layer.rows * layer.cols || layer.bias.len() != layer.rows {
                return Err(Error::Schema(
                    "artifact layer shapes are inconsistent".into(),
                ));
            }
        }
        Ok(RiskModel {
            architecture: self.architecture.clone(),
            layers: self.layers.clone(),
            input_width: self.input_width,
            version: 0,
        })
    }
}
