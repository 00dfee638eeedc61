//! Default experiment constants, collected in one place so the CLI and the
//! test suites agree on them.

/// Hidden states of the latent-class imputation model.
pub const LATENT_STATES: usize = 90;

/// Additive pseudocount applied in every EM normalization.
pub const EM_SMOOTHING: f64 = 1e-3;

/// EM stopping rule: relative change of mean per-record log-likelihood.
pub const EM_REL_TOL: f64 = 1e-6;

/// EM iteration cap.
pub const EM_MAX_ITERS: usize = 500;

/// Bins per continuous feature when the schema does not say otherwise.
pub const BIN_COUNT: usize = 10;

/// Survival training epochs.
pub const EPOCHS: usize = 100;

/// Epoch after which the learning rate shrinks.
pub const LR_DECAY_EPOCH: usize = 30;

/// Learning-rate shrink factor applied at [`LR_DECAY_EPOCH`].
pub const LR_DECAY_FACTOR: f64 = 0.1;

/// Initial Adam learning rates the pipeline was tuned with. The first is the
/// default; the second suits the wider joint-representation models.
pub const LEARNING_RATES: [f64; 2] = [0.01, 0.03];

/// Default initial learning rate.
pub const LEARNING_RATE: f64 = LEARNING_RATES[0];

/// Training batch size.
pub const BATCH_SIZE: usize = 16;

/// Cross-validation folds.
pub const FOLDS: usize = 5;

/// Feature counts dropped per record in the imputation-degradation
/// experiment.
pub const DROP_COUNTS: [usize; 4] = [1, 2, 3, 4];

/// Repeats of the imputation-degradation experiment.
pub const REPEATS: usize = 5;

/// Hidden layer widths of the default MLP risk model.
pub const MLP_HIDDEN: [usize; 1] = [32];
