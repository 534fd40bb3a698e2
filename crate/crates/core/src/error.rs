use thiserror::Error;

#[derive(Debug, Error)]
pub enum SvaError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("numerical rank deficiency: {0}")]
    NumericalRank(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SvaError {
    /// True for failures caused by bad input or configuration rather than I/O.
    pub fn is_config(&self) -> bool {
        !matches!(self, SvaError::Io(_) | SvaError::Csv(_))
    }
}

pub type Result<T> = std::result::Result<T, SvaError>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(SvaError::Argument(msg.into()))
}
