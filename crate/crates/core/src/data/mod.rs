//! Core data types: feature schemas, equal-frequency binning of continuous
//! features, discretized clinical records, survival outcomes, and cohorts.
//!
//! Everything here is immutable after construction and safe to share
//! read-only across threads.

mod binning;
mod csv_io;

pub use binning::{discretize_record, discretize_value, fit_binning, fit_binning_for_cohort};
pub use csv_io::{load_and_discretize, load_cohort, load_schema, save_schema, write_cohort_csv};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind of a clinical feature: a categorical state set, or a continuous
/// measurement handled through equal-frequency bins.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    Categorical { labels: Vec<String> },
    Continuous { bin_count: usize },
}

/// One declared feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
}

impl Feature {
    /// Number of discrete states this feature can take after discretization.
    pub fn state_count(&self) -> usize {
        match &self.kind {
            FeatureKind::Categorical { labels } => labels.len(),
            FeatureKind::Continuous { bin_count } => *bin_count,
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, FeatureKind::Continuous { .. })
    }
}

/// Ordered feature declarations plus the set of features that are required
/// to be observed in every record (e.g. demographics that every chart has).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    features: Vec<Feature>,
    always_observed: BTreeSet<usize>,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>, always_observed: BTreeSet<usize>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Schema("schema declares no features".into()));
        }
        let mut seen = BTreeSet::new();
        for f in &features {
            if !seen.insert(f.name.clone()) {
                return Err(Error::Schema(format!(
                    "duplicate feature name `{}`",
                    f.name
                )));
            }
            match &f.kind {
                FeatureKind::Categorical { labels } => {
                    if labels.len() < 2 {
                        return Err(Error::Schema(format!(
                            "feature `{}` needs at least 2 categories",
                            f.name
                        )));
                    }
                    let mut lab_seen = BTreeSet::new();
                    for l in labels {
                        if !lab_seen.insert(l) {
                            return Err(Error::Schema(format!(
                                "feature `{}` repeats category label `{l}`",
                                f.name
                            )));
                        }
                    }
                }
                FeatureKind::Continuous { bin_count } => {
                    if *bin_count < 2 {
                        return Err(Error::Schema(format!(
                            "feature `{}` needs at least 2 bins",
                            f.name
                        )));
                    }
                }
            }
        }
        if let Some(&bad) = always_observed.iter().find(|&&i| i >= features.len()) {
            return Err(Error::Schema(format!(
                "always_observed index {bad} is out of range"
            )));
        }
        Ok(Self {
            features,
            always_observed,
        })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    pub fn feature(&self, idx: usize) -> &Feature {
        &self.features[idx]
    }

    pub fn always_observed(&self) -> &BTreeSet<usize> {
        &self.always_observed
    }

    pub fn is_always_observed(&self, idx: usize) -> bool {
        self.always_observed.contains(&idx)
    }

    /// Feature indices that masking experiments may drop.
    pub fn maskable_features(&self) -> Vec<usize> {
        (0..self.features.len())
            .filter(|i| !self.always_observed.contains(i))
            .collect()
    }

    pub fn state_counts(&self) -> Vec<usize> {
        self.features.iter().map(Feature::state_count).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Stable fingerprint of the declaration; model artifacts refuse to load
    /// against a schema with a different fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut canon = String::new();
        for f in &self.features {
            canon.push_str(&f.name);
            match &f.kind {
                FeatureKind::Categorical { labels } => {
                    canon.push_str("|cat|");
                    for l in labels {
                        canon.push_str(l);
                        canon.push(',');
                    }
                }
                FeatureKind::Continuous { bin_count } => {
                    canon.push_str(&format!("|cont|{bin_count}"));
                }
            }
            canon.push(';');
        }
        canon.push_str("ao:");
        for i in &self.always_observed {
            canon.push_str(&format!("{i},"));
        }
        format!("{:016x}", crate::rng::mix_seed(0, &canon))
    }
}

/// Bin boundaries and per-bin representative values for one continuous
/// feature, in the feature's own units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBinning {
    /// Strictly increasing interior boundaries; bin `i` is `[edges[i-1], edges[i])`,
    /// with the outer bins unbounded.
    pub edges: Vec<f64>,
    /// One value per bin (the mean of the training values that fell there).
    pub representatives: Vec<f64>,
}

impl FeatureBinning {
    pub fn new(edges: Vec<f64>, representatives: Vec<f64>) -> Result<Self> {
        if representatives.len() != edges.len() + 1 {
            return Err(Error::Schema(format!(
                "binning needs edges+1 representatives, got {} edges and {} representatives",
                edges.len(),
                representatives.len()
            )));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema(
                "bin edges must be strictly increasing".into(),
            ));
        }
        for (bin, &rep) in representatives.iter().enumerate() {
            let lo = if bin == 0 {
                f64::NEG_INFINITY
            } else {
                edges[bin - 1]
            };
            let hi = if bin == edges.len() {
                f64::INFINITY
            } else {
                edges[bin]
            };
            if !(rep >= lo && rep < hi) {
                return Err(Error::Schema(format!(
                    "representative {rep} of bin {bin} falls outside [{lo}, {hi})"
                )));
            }
        }
        Ok(Self {
            edges,
            representatives,
        })
    }

    pub fn bin_count(&self) -> usize {
        self.representatives.len()
    }
}

/// Per-feature binning for a schema; `None` for categorical features.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    pub per_feature: Vec<Option<FeatureBinning>>,
}

impl BinningSpec {
    /// A spec with no continuous features binned (valid for pure-categorical
    /// schemas).
    pub fn empty(feature_count: usize) -> Self {
        Self {
            per_feature: vec![None; feature_count],
        }
    }

    pub fn for_feature(&self, idx: usize) -> Option<&FeatureBinning> {
        self.per_feature.get(idx).and_then(|b| b.as_ref())
    }

    /// Check that every continuous feature has a binning with the declared
    /// bin count.
    pub fn validate_against(&self, schema: &FeatureSchema) -> Result<()> {
        if self.per_feature.len() != schema.feature_count() {
            return Err(Error::Schema(format!(
                "binning covers {} features, schema declares {}",
                self.per_feature.len(),
                schema.feature_count()
            )));
        }
        for (i, f) in schema.features().iter().enumerate() {
            match (&f.kind, &self.per_feature[i]) {
                (FeatureKind::Continuous { bin_count }, Some(b)) => {
                    if b.bin_count() != *bin_count {
                        return Err(Error::Schema(format!(
                            "feature `{}` declares {} bins but binning holds {}",
                            f.name,
                            bin_count,
                            b.bin_count()
                        )));
                    }
                }
                (FeatureKind::Continuous { .. }, None) => {
                    return Err(Error::Schema(format!(
                        "continuous feature `{}` has no fitted binning",
                        f.name
                    )));
                }
                (FeatureKind::Categorical { .. }, Some(_)) => {
                    return Err(Error::Schema(format!(
                        "categorical feature `{}` carries a binning",
                        f.name
                    )));
                }
                (FeatureKind::Categorical { .. }, None) => {}
            }
        }
        Ok(())
    }

    /// Stable digest used to detect artifact mismatches across pipeline stages.
    pub fn digest(&self) -> String {
        let mut canon = String::new();
        for b in &self.per_feature {
            match b {
                None => canon.push('_'),
                Some(fb) => {
                    for e in &fb.edges {
                        canon.push_str(&format!("{:x},", e.to_bits()));
                    }
                    canon.push('|');
                    for r in &fb.representatives {
                        canon.push_str(&format!("{:x},", r.to_bits()));
                    }
                }
            }
            canon.push(';');
        }
        format!("{:016x}", crate::rng::mix_seed(1, &canon))
    }
}

/// Raw (pre-discretization) cell value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RawValue {
    /// Resolved categorical state index.
    Category(usize),
    /// Continuous measurement in feature units.
    Numeric(f64),
}

/// One patient's row before continuous features are binned.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub patient_id: String,
    /// Aligned with the schema; `None` marks a missing cell.
    pub values: Vec<Option<RawValue>>,
}

/// One patient's discretized feature vector. A `None` state is a missing
/// value; present states index into that feature's categories or bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalRecord {
    pub patient_id: String,
    pub states: Vec<Option<usize>>,
}

impl ClinicalRecord {
    pub fn missing_features(&self) -> Vec<usize> {
        self.states
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.is_none().then_some(i))
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.states.iter().all(Option::is_some)
    }
}

/// Observed follow-up for one patient: time in weeks and whether the event
/// (death) was observed (`true`) or the patient was censored (`false`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalOutcome {
    pub time: f64,
    pub event: bool,
}

impl SurvivalOutcome {
    pub fn new(time: f64, event: bool) -> Result<Self> {
        if !time.is_finite() || time < 0.0 {
            return Err(Error::Schema(format!(
                "survival time must be finite and nonnegative, got {time}"
            )));
        }
        Ok(Self { time, event })
    }
}

/// A cohort with raw continuous values, prior to binning. Binning specs are
/// fitted on raw training values only.
#[derive(Debug, Clone)]
pub struct RawCohort {
    pub schema: FeatureSchema,
    pub records: Vec<RawRecord>,
    pub outcomes: Option<Vec<SurvivalOutcome>>,
}

impl RawCohort {
    /// Observed numeric values for one continuous feature.
    pub fn numeric_values(&self, feature: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| match r.values[feature] {
                Some(RawValue::Numeric(v)) => Some(v),
                _ => None,
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> RawCohort {
        RawCohort {
            schema: self.schema.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            outcomes: self
                .outcomes
                .as_ref()
                .map(|o| indices.iter().map(|&i| o[i]).collect()),
        }
    }
}

/// A discretized cohort: schema, the binning used to discretize it, one
/// record per patient, and (when the file carried them) aligned outcomes.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub schema: FeatureSchema,
    pub binning: BinningSpec,
    pub records: Vec<ClinicalRecord>,
    pub outcomes: Option<Vec<SurvivalOutcome>>,
}

impl Cohort {
    /// Discretize a raw cohort with a fitted binning.
    pub fn from_raw(raw: &RawCohort, binning: BinningSpec) -> Result<Self> {
        binning.validate_against(&raw.schema)?;
        let records: Vec<ClinicalRecord> = raw
            .records
            .iter()
            .map(|r| discretize_record(r, &raw.schema, &binning))
            .collect::<Result<_>>()?;
        let cohort = Cohort {
            schema: raw.schema.clone(),
            binning,
            records,
            outcomes: raw.outcomes.clone(),
        };
        cohort.validate()?;
        Ok(cohort)
    }

    pub fn validate(&self) -> Result<()> {
        self.binning.validate_against(&self.schema)?;
        if let Some(outcomes) = &self.outcomes {
            if outcomes.len() != self.records.len() {
                return Err(Error::Schema(format!(
                    "{} outcomes for {} records",
                    outcomes.len(),
                    self.records.len()
                )));
            }
        }
        let mut ids = BTreeSet::new();
        let counts = self.schema.state_counts();
        for rec in &self.records {
            if !ids.insert(rec.patient_id.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate patient_id `{}`",
                    rec.patient_id
                )));
            }
            if rec.states.len() != counts.len() {
                return Err(Error::Schema(format!(
                    "record `{}` has {} states for {} features",
                    rec.patient_id,
                    rec.states.len(),
                    counts.len()
                )));
            }
            for (i, state) in rec.states.iter().enumerate() {
                match state {
                    Some(s) if *s >= counts[i] => {
                        return Err(Error::Schema(format!(
                            "record `{}` state {s} out of range for feature `{}`",
                            rec.patient_id,
                            self.schema.feature(i).name
                        )));
                    }
                    None if self.schema.is_always_observed(i) => {
                        return Err(Error::Schema(format!(
                            "record `{}` is missing always-observed feature `{}`",
                            rec.patient_id,
                            self.schema.feature(i).name
                        )));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            schema: self.schema.clone(),
            binning: self.binning.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            outcomes: self
                .outcomes
                .as_ref()
                .map(|o| indices.iter().map(|&i| o[i]).collect()),
        }
    }

    pub fn outcomes(&self) -> Result<&[SurvivalOutcome]> {
        self.outcomes
            .as_deref()
            .ok_or_else(|| Error::Schema("cohort carries no survival outcomes".into()))
    }

    /// Representative value of a continuous feature state.
    pub fn representative(&self, feature: usize, state: usize) -> Option<f64> {
        self.binning
            .for_feature(feature)
            .map(|b| b.representatives[state])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_feature_schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                Feature {
                    name: "sex".into(),
                    kind: FeatureKind::Categorical {
                        labels: vec!["m".into(), "f".into()],
                    },
                },
                Feature {
                    name: "fvc".into(),
                    kind: FeatureKind::Continuous { bin_count: 3 },
                },
            ],
            BTreeSet::from([0]),
        )
        .unwrap()
    }

    #[test]
    fn schema_rejects_duplicate_names() {
        let err = FeatureSchema::new(
            vec![
                Feature {
                    name: "a".into(),
                    kind: FeatureKind::Continuous { bin_count: 2 },
                },
                Feature {
                    name: "a".into(),
                    kind: FeatureKind::Continuous { bin_count: 2 },
                },
            ],
            BTreeSet::new(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn schema_rejects_degenerate_cardinality() {
        assert!(FeatureSchema::new(
            vec![Feature {
                name: "x".into(),
                kind: FeatureKind::Categorical {
                    labels: vec!["only".into()]
                },
            }],
            BTreeSet::new(),
        )
        .is_err());
        assert!(FeatureSchema::new(
            vec![Feature {
                name: "x".into(),
                kind: FeatureKind::Continuous { bin_count: 1 },
            }],
            BTreeSet::new(),
        )
        .is_err());
    }

    #[test]
    fn fingerprint_changes_with_declaration() {
        let a = two_feature_schema();
        let b = FeatureSchema::new(
            vec![
                Feature {
                    name: "sex".into(),
                    kind: FeatureKind::Categorical {
                        labels: vec!["m".into(), "f".into()],
                    },
                },
                Feature {
                    name: "fvc".into(),
                    kind: FeatureKind::Continuous { bin_count: 4 },
                },
            ],
            BTreeSet::from([0]),
        )
        .unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), two_feature_schema().fingerprint());
    }

    #[test]
    fn binning_representative_must_lie_in_bin() {
        assert!(FeatureBinning::new(vec![2.5, 4.5], vec![1.5, 3.5, 5.5]).is_ok());
        assert!(FeatureBinning::new(vec![2.5, 4.5], vec![1.5, 4.5, 5.5]).is_err());
        assert!(FeatureBinning::new(vec![4.5, 2.5], vec![1.5, 3.5, 5.5]).is_err());
    }

    #[test]
    fn outcome_rejects_negative_or_nonfinite_time() {
        assert!(SurvivalOutcome::new(-1.0, true).is_err());
        assert!(SurvivalOutcome::new(f64::NAN, false).is_err());
        assert!(SurvivalOutcome::new(0.0, false).is_ok());
    }

    #[test]
    fn cohort_rejects_duplicate_patient_ids() {
        let schema = two_feature_schema();
        let binning = BinningSpec {
            per_feature: vec![
                None,
                Some(FeatureBinning::new(vec![2.5, 4.5], vec![1.5, 3.5, 5.5]).unwrap()),
            ],
        };
        let rec = ClinicalRecord {
            patient_id: "p1".into(),
            states: vec![Some(0), Some(1)],
        };
        let cohort = Cohort {
            schema,
            binning,
            records: vec![rec.clone(), rec],
            outcomes: None,
        };
        assert!(cohort.validate().is_err());
    }
}
