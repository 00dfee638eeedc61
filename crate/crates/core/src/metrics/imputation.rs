//! Imputation-quality metrics.

use crate::error::{Error, Result};

/// Root-mean-square error normalized by the range of the true values:
///
/// ```text
/// NRMSE = sqrt((1/|y|) Σ (y_i - ŷ_i)^2) / (max(y) - min(y))
/// ```
pub fn nrmse(truth: &[f64], imputed: &[f64]) -> Result<f64> {
    if truth.len() != imputed.len() {
        return Err(Error::Numeric(
            "true and imputed vectors differ in length".into(),
        ));
    }
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("empty vectors".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &y in truth {
        lo = lo.min(y);
        hi = hi.max(y);
    }
    if hi <= lo {
        return Err(Error::UndefinedMetric(
            "true values have zero range; NRMSE is undefined".into(),
        ));
    }
    let mse = truth
        .iter()
        .zip(imputed)
        .map(|(y, yh)| (y - yh) * (y - yh))
        .sum::<f64>()
        / truth.len() as f64;
    Ok(mse.sqrt() / (hi - lo))
}

/// Exact-match fraction of imputed categorical states.
pub fn imputation_accuracy(truth: &[usize], imputed: &[usize]) -> Result<f64> {
    if truth.len() != imputed.len() {
        return Err(Error::Numeric(
            "true and imputed vectors differ in length".into(),
        ));
    }
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("empty vectors".into()));
    }
    let hits = truth.iter().zip(imputed).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}
