use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum GapError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl GapError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        GapError::InvalidInput(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        GapError::Data(msg.into())
    }

    /// True for errors caused by numerics rather than by bad user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            GapError::Singular(_) | GapError::NonFinite(_) | GapError::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, GapError>;
