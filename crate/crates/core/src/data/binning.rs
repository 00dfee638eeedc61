//! Equal-frequency binning of continuous features and record discretization.

use crate::data::{
    BinningSpec, ClinicalRecord, FeatureBinning, FeatureKind, FeatureSchema, RawCohort, RawRecord,
    RawValue,
};
use crate::error::{Error, Result};

/// Fit equal-frequency bins to the observed training values of one feature.
///
/// Edges sit halfway between distinct adjacent sorted values, chosen so each
/// bin receives as equal a share of the values as possible; runs of equal
/// values are never split (they land in the lower bin). Representatives are
/// the mean of the training values falling in each bin.
pub fn fit_binning(feature_name: &str, values: &[f64], bin_count: usize) -> Result<FeatureBinning> {
    if values.is_empty() {
        return Err(Error::Schema(format!(
            "feature `{feature_name}`: no observed values to fit bins"
        )));
    }
    if bin_count < 2 {
        return Err(Error::Schema(format!(
            "feature `{feature_name}`: bin_count must be at least 2"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Schema(format!(
            "feature `{feature_name}`: non-finite value in training data"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();

    // Positions where adjacent sorted values differ; a cut can only go there.
    let boundaries: Vec<usize> = (1..n).filter(|&i| sorted[i - 1] < sorted[i]).collect();
    if boundaries.len() + 1 < bin_count {
        return Err(Error::Schema(format!(
            "feature `{feature_name}`: {} distinct values cannot fill {bin_count} bins",
            boundaries.len() + 1
        )));
    }

    // Pick bin_count-1 boundaries, each nearest its quantile cut position,
    // keeping enough boundaries in reserve for the cuts still to place.
    let mut cuts = Vec::with_capacity(bin_count - 1);
    let mut next_boundary = 0usize;
    for i in 1..bin_count {
        let target = i * n / bin_count;
        let remaining_cuts = bin_count - 1 - i;
        let last_usable = boundaries.len() - 1 - remaining_cuts;
        let mut best = next_boundary;
        for j in next_boundary..=last_usable {
            if boundaries[j].abs_diff(target) <= boundaries[best].abs_diff(target) {
                best = j;
            } else {
                break; // boundaries are sorted, distance only grows from here
            }
        }
        cuts.push(boundaries[best]);
        next_boundary = best + 1;
    }

    let edges: Vec<f64> = cuts
        .iter()
        .map(|&c| (sorted[c - 1] + sorted[c]) / 2.0)
        .collect();

    let mut representatives = Vec::with_capacity(bin_count);
    let mut start = 0usize;
    for &cut in cuts.iter().chain(std::iter::once(&n)) {
        let slice = &sorted[start..cut];
        representatives.push(slice.iter().sum::<f64>() / slice.len() as f64);
        start = cut;
    }

    FeatureBinning::new(edges, representatives)
}

/// Map a raw continuous value to its bin index. Values beyond the outer
/// edges clamp to the outer bins.
pub fn discretize_value(value: f64, edges: &[f64]) -> usize {
    edges.iter().take_while(|&&e| value >= e).count()
}

/// Discretize one raw record: continuous values map to bin indices, missing
/// cells stay missing, categorical states pass through.
pub fn discretize_record(
    raw: &RawRecord,
    schema: &FeatureSchema,
    binning: &BinningSpec,
) -> Result<ClinicalRecord> {
    let mut states = Vec::with_capacity(raw.values.len());
    for (i, value) in raw.values.iter().enumerate() {
        let feature = schema.feature(i);
        let state = match (value, &feature.kind) {
            (None, _) => None,
            (Some(RawValue::Category(s)), FeatureKind::Categorical { labels }) => {
                if *s >= labels.len() {
                    return Err(Error::Schema(format!(
                        "record `{}`: state {s} out of range for feature `{}`",
                        raw.patient_id, feature.name
                    )));
                }
                Some(*s)
            }
            (Some(RawValue::Numeric(v)), FeatureKind::Continuous { .. }) => {
                if !v.is_finite() {
                    return Err(Error::Schema(format!(
                        "record `{}`: non-finite value for feature `{}`",
                        raw.patient_id, feature.name
                    )));
                }
                let fb = binning.for_feature(i).ok_or_else(|| {
                    Error::Schema(format!("feature `{}` has no fitted binning", feature.name))
                })?;
                Some(discretize_value(*v, &fb.edges))
            }
            _ => {
                return Err(Error::Schema(format!(
                    "record `{}`: value kind does not match feature `{}`",
                    raw.patient_id, feature.name
                )));
            }
        };
        states.push(state);
    }
    Ok(ClinicalRecord {
        patient_id: raw.patient_id.clone(),
        states,
    })
}

/// Fit binning for every continuous feature of a raw cohort from its
/// observed values only.
pub fn fit_binning_for_cohort(raw: &RawCohort) -> Result<BinningSpec> {
    let mut per_feature = Vec::with_capacity(raw.schema.feature_count());
    for (i, f) in raw.schema.features().iter().enumerate() {
        match &f.kind {
            FeatureKind::Categorical { .. } => per_feature.push(None),
            FeatureKind::Continuous { bin_count } => {
                let values = raw.numeric_values(i);
                per_feature.push(Some(fit_binning(&f.name, &values, *bin_count)?));
            }
        }
    }
    Ok(BinningSpec { per_feature })
}
