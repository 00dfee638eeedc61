//! Right-censored survival analysis on tabular clinical records with missing
//! values.
//!
//! The pipeline has three stages:
//!
//! - [`imputer`] — a latent-class mixture of per-state categorical
//!   distributions, trained by EM directly on records with missing cells, and
//!   the exact posterior over missing values for sampling, MAP, and
//!   expectation imputation.
//! - [`trainer`] — Cox partial-likelihood training of a risk model
//!   ([`risk`]) over the whole cohort at every minibatch step, using a memory
//!   bank of stale per-patient scores so small batches never lose death
//!   events.
//! - [`metrics`] — discrimination and calibration: Harrell and IPCW
//!   concordance, Kaplan-Meier and Nelson-Aalen estimators, Breslow baseline
//!   hazard, Brier score and its integral, plus imputation-quality metrics.
//!
//! [`synthgen`] generates cohorts with known ground truth (latent-class
//! features, log-linear exponential hazards, independent censoring, MCAR
//! masking) so every component can be checked against an oracle.
//!
//! Built with the default `parallel` feature, data-parallel inner loops run
//! on rayon; without it the same code runs serially. Reductions use a fixed
//! tree order either way, so results are bitwise identical across both
//! builds and any thread count.

pub mod data;
pub mod defaults;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod imputer;
pub mod metrics;
pub mod risk;
pub mod rng;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
