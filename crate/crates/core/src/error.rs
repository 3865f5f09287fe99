use thiserror::Error;

/// Errors produced by the clustering engine.
#[derive(Debug, Error)]
pub enum TacError {
    #[error("cannot normalize a zero vector")]
    Normalization,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("noun selection failed: {0}")]
    Selection(String),
    #[error("training diverged at step {step}: {detail}")]
    TrainingDiverged { step: u64, detail: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TacError>;

pub(crate) fn dim_err(msg: impl Into<String>) -> TacError {
    TacError::Dimension(msg.into())
}

pub(crate) fn param_err(msg: impl Into<String>) -> TacError {
    TacError::Parameter(msg.into())
}
