//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the polyphonia library.
#[derive(Debug, Error)]
pub enum PolyError {
    /// Caller handed us something that violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two tensors/spectra that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Input is structurally valid but too small/degenerate for the operation.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A config file or run description could not be interpreted.
    #[error("config error: {0}")]
    Config(String),

    /// A serialized artifact (tensor container, CSV, manifest) is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PolyError {
    /// Process exit code contract: 1 for usage/argument errors, 2 for IO/data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PolyError::InvalidInput(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, PolyError>;
