use thiserror::Error;

pub type Result<T> = std::result::Result<T, RmcError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RmcError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("regression failed at step {step}: {reason}")]
    Regression { step: usize, reason: String },

    #[error("unsupported problem for this operation: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for RmcError {
    fn from(e: std::io::Error) -> Self {
        RmcError::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> RmcError {
    RmcError::InvalidParameter(msg.into())
}
