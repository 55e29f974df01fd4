use thiserror::Error;

use crate::coreset::CoresetResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),

    /// Exhaustive subset search would exceed the configured enumeration cap.
    #[error("subset enumeration needs {required} candidates, cap is {cap}")]
    Capacity { required: u128, cap: u64 },

    /// CORE-SET hit its outer-round cap; the partial state is kept for inspection.
    #[error("CORE-SET did not terminate within {rounds} outer rounds")]
    Timeout {
        rounds: u64,
        partial: Box<CoresetResult>,
    },

    #[error("instance generation failed: {0}")]
    Generation(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
