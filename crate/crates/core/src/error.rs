use thiserror::Error;

/// Crate-wide error type. `InvalidInput` maps to CLI exit code 2,
/// `InvalidState` to exit code 3.
#[derive(Debug, Error)]
pub enum SplatError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SplatError>;

impl SplatError {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        SplatError::InvalidInput(msg.into())
    }

    pub fn invalid_state(msg: impl Into<String>) -> Self {
        SplatError::InvalidState(msg.into())
    }

    /// Process exit code for the CLI: 2 for bad inputs (including unreadable
    /// or malformed files), 3 for invalid internal state.
    pub fn exit_code(&self) -> i32 {
        match self {
            SplatError::InvalidInput(_) | SplatError::Parse(_) | SplatError::Io(_) => 2,
            SplatError::InvalidState(_) => 3,
        }
    }
}
