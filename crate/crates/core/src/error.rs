use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum OpeError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("support violation: {0}")]
    Support(String),

    #[error("missing input: {0}")]
    Configuration(String),

    #[error("all importance weights are zero{0}")]
    AllZeroWeights(String),

    #[error("did not converge within {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("optimization diverged: {0}")]
    Divergence(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = OpeError> = std::result::Result<T, E>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(OpeError::Argument(msg.into()))
}
