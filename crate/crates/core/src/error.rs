use thiserror::Error;

/// Errors raised by the library and the experiment driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("trajectory space of size {size} exceeds the enumeration cap {cap}")]
    Capacity { size: u128, cap: usize },

    #[error("invalid mode partition: {0}")]
    Partition(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("degenerate mode: {0}")]
    DegenerateMode(String),

    #[error("scenario has no mode partition")]
    MissingPartition,

    #[error("non-finite parameter at index {0}")]
    NonFinite(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Json(_)
            | Error::Partition(_)
            | Error::ShapeMismatch(_)
            | Error::LengthMismatch { .. }
            | Error::OutOfRange(_)
            | Error::MissingPartition
            | Error::NonFinite(_)
            | Error::DegenerateMode(_) => 2,
            Error::Capacity { .. } => 3,
            Error::Validation(_) => 4,
            Error::Io(_) => 1,
        }
    }
}
