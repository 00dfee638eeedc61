//! Discrimination, calibration, and imputation-quality metrics for censored
//! survival data.

mod brier;
mod concordance;
mod correlation;
mod imputation;
mod km;

pub use brier::{
    breslow_baseline, brier_score, brier_score_ipcw, integrated_brier, integrated_brier_ipcw,
    predict_survival_curves, survival_curve_for, IbsResult,
};
pub use concordance::{harrell_cindex, ipcw_cindex, ipcw_cindex_with, CensoringDistribution};
pub use correlation::feature_correlation;
pub use imputation::{imputation_accuracy, nrmse};
pub use km::{kaplan_meier, nelson_aalen, CumulativeHazard, KmTarget, SurvivalCurve};

use serde::{Deserialize, Serialize};

/// One metric value with its provenance, as emitted in JSON reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Time grid the metric integrated over, when applicable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
}
