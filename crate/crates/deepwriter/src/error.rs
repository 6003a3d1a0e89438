use std::path::PathBuf;

use thiserror::Error;

/// Error type shared across the engine.
#[derive(Debug, Error)]
pub enum DwError {
    /// Tensor or layer dimensions do not fit together.
    #[error("shape error: {0}")]
    Shape(String),

    /// A value violates an operation's domain (empty input, bad ratio, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// File system or decoding failure, with the offending path.
    #[error("io error on {path}: {message}")]
    Io { path: PathBuf, message: String },

    /// Checkpoint bytes do not parse or fail integrity checks.
    #[error("checkpoint format error: {0}")]
    Format(String),

    /// A checkpoint cannot be applied to the requested network.
    #[error("transfer error: incompatible layers: {0}")]
    Transfer(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at iteration {iteration}: loss is not finite")]
    Diverged { iteration: u64 },
}

pub type Result<T> = std::result::Result<T, DwError>;
