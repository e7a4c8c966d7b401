use thiserror::Error;

/// Errors surfaced by the engine. Validation problems (`Shape`, `Invalid`,
/// `Config`) map to CLI exit code 1; `NumericalCheck` maps to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("idx format error: {0}")]
    Idx(String),

    #[error("numerical check failed: {0}")]
    NumericalCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
