use thiserror::Error;

/// Errors produced by the analysis and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid metric: {0}")]
    InvalidMetric(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate case: {0}")]
    DegenerateCase(String),

    #[error("no invariant distribution: {0}")]
    NoInvariant(String),

    #[error("bound unavailable: {0}")]
    BoundUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
