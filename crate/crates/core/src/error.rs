use thiserror::Error;

/// Errors surfaced while validating data, fitting models, or evaluating metrics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("row {row}: {message}")]
    CsvRow { row: u64, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("all patients are censored; the partial likelihood has no death terms")]
    AllCensored,
    #[error("artifact fingerprint {found} does not match the supplied schema ({expected})")]
    FingerprintMismatch { found: String, expected: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV parse failure: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
