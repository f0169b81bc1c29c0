use thiserror::Error;

use crate::lp::LpStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("quantile level must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),

    #[error("restricted design on support {support:?} is rank deficient")]
    RankDeficient { support: Vec<usize> },

    #[error("linear program terminated with status {0:?}")]
    Lp(LpStatus),

    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("enumeration would visit {required} supports, cap is {cap}")]
    EnumerationCap { required: u128, cap: u128 },

    #[error("all {0} tuning candidates failed")]
    AllCandidatesFailed(usize),

    #[error("constant column {0} cannot be expanded")]
    ConstantColumn(String),

    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("{0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
