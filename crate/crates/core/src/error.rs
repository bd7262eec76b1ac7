//! Crate-wide error type.
//!
//! Configuration problems and data/usage problems are kept in separate
//! variants because the CLI maps them to different exit codes (2 for bad
//! configs, 3 for runtime failures).

use thiserror::Error;

/// All failure modes surfaced by the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid dataset shape, value range, or specification.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Invalid corruption specification or an injector that cannot proceed.
    #[error("invalid corruption: {0}")]
    InvalidCorruption(String),

    /// Mismatched array dimensions between cooperating values.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Invalid loss or optimizer parameterization.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// CSV file that does not conform to the expected schema.
    #[error("csv error: {0}")]
    Csv(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
