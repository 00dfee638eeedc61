//! Pairwise-complete Pearson correlation between features, treating
//! categorical states as integer codes and continuous states as their bin
//! representatives.

use crate::data::Cohort;
use crate::error::Result;
use crate::exec;

/// Symmetric matrix of pairwise-complete Pearson coefficients. An entry is
/// `None` when fewer than two records observe both features or either has
/// zero variance on the jointly observed records.
pub fn feature_correlation(cohort: &Cohort) -> Result<Vec<Vec<Option<f64>>>> {
    let k = cohort.schema.feature_count();
    // Numeric encoding per record per feature.
    let encoded: Vec<Vec<Option<f64>>> = cohort
        .records
        .iter()
        .map(|rec| {
            (0..k)
                .map(|f| {
                    rec.states[f].map(|s| match cohort.representative(f, s) {
                        Some(rep) => rep,
                        None => s as f64,
                    })
                })
                .collect()
        })
        .collect();

    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a..k).map(move |b| (a, b))).collect();
    let entries: Vec<Option<f64>> = exec::map(&pairs, |&(a, b)| {
        let joint: Vec<(f64, f64)> = encoded
            .iter()
            .filter_map(|row| match (row[a], row[b]) {
                (Some(x), Some(y)) => Some((x, y)),
                _ => None,
            })
            .collect();
        if joint.len() < 2 {
            return None;
        }
        let n = joint.len() as f64;
        let mx = joint.iter().map(|p| p.0).sum::<f64>() / n;
        let my = joint.iter().map(|p| p.1).sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        let mut sxy = 0.0;
        for &(x, y) in &joint {
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
            sxy += (x - mx) * (y - my);
        }
        if sxx <= 0.0 || syy <= 0.0 {
            return None;
        }
        Some(sxy / (sxx * syy).sqrt())
    });

    let mut matrix = vec![vec![None; k]; k];
    for ((a, b), r) in pairs.into_iter().zip(entries) {
        matrix[a][b] = r;
        matrix[b][a] = r;
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BinningSpec, ClinicalRecord, Cohort, Feature, FeatureKind, FeatureSchema};
    use std::collections::BTreeSet;

    fn categorical(name: &str, card: usize) -> Feature {
        Feature {
            name: name.into(),
            kind: FeatureKind::Categorical {
                labels: (0..card).map(|i| format!("c{i}")).collect(),
            },
        }
    }

    fn cohort_of(states: Vec<Vec<Option<usize>>>, card: usize) -> Cohort {
        let k = states[0].len();
        let schema = FeatureSchema::new(
            (0..k)
                .map(|i| categorical(&format!("f{i}"), card))
                .collect(),
            BTreeSet::new(),
        )
        .unwrap();
        Cohort {
            binning: BinningSpec::empty(k),
            schema,
            records: states
                .into_iter()
                .enumerate()
                .map(|(i, s)| ClinicalRecord {
                    patient_id: format!("p{i}"),
                    states: s,
                })
                .collect(),
            outcomes: None,
        }
    }

    #[test]
    fn self_correlation_is_one_and_affine_pairs_are_exact() {
        // f1 = f0, f2 = reversed f0 (an affine map with negative slope).
        let states: Vec<Vec<Option<usize>>> = (0..6)
            .map(|i| vec![Some(i % 3), Some(i % 3), Some(2 - i % 3)])
            .collect();
        let m = feature_correlation(&cohort_of(states, 3)).unwrap();
        assert!((m[0][0].unwrap() - 1.0).abs() < 1e-12);
        assert!((m[0][1].unwrap() - 1.0).abs() < 1e-12);
        assert!((m[0][2].unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(m[1][2], m[2][1]);
    }

    #[test]
    fn zero_variance_pair_is_undefined() {
        let states: Vec<Vec<Option<usize>>> = (0..4).map(|i| vec![Some(0), Some(i % 2)]).collect();
        let m = feature_correlation(&cohort_of(states, 2)).unwrap();
        assert_eq!(m[0][1], None);
        assert_eq!(m[0][0], None); // constant feature: undefined even with itself
        assert!(m[1][1].is_some());
    }

    #[test]
    fn pairwise_complete_uses_jointly_observed_rows_only() {
        // Rows where either is missing must not affect the estimate.
        let states = vec![
            vec![Some(0), Some(0)],
            vec![Some(1), Some(1)],
            vec![Some(2), Some(2)],
            vec![None, Some(0)],
            vec![Some(0), None],
        ];
        let m = feature_correlation(&cohort_of(states, 3)).unwrap();
        assert!((m[0][1].unwrap() - 1.0).abs() < 1e-12);
    }
}
