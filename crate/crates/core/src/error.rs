use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at timestep {step}: {what}")]
    DimensionMismatch { step: usize, what: String },

    #[error("matrix is not positive definite at timestep {step}: {what}")]
    NotPositiveDefinite { step: usize, what: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("policy optimization diverged after {} iterations: {message}", trace.len())]
    Divergence { message: String, trace: Vec<f64> },

    #[error("dual search failed: {0}")]
    DualSearch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(step: usize, what: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            step,
            what: what.into(),
        }
    }
}
