use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no common support: both observations are empty")]
    NoCommonSupport,

    #[error("insufficient data for model fit: {0}")]
    InsufficientData(String),

    #[error("underconstrained graph: {0}")]
    Underconstrained(String),

    #[error("non-finite cost at {0}")]
    NonFiniteCost(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Underconstrained(_) | Error::NonFiniteCost(_))
    }
}
