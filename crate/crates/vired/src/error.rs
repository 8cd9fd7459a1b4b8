//! Crate-wide error type and result alias.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// A configuration value violates a structural invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called outside its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An index refers outside the valid range.
    #[error("index error: {0}")]
    Index(String),

    /// A checkpoint file is malformed or names an unexpected tensor set.
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    /// A dataset directory or manifest is invalid.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// The training loss became non-finite.
    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: u64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON or other parse failure.
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Whether the error is attributable to user input (bad paths, configs,
    /// malformed files) rather than an internal invariant breach.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Checkpoint(_)
                | Error::Dataset(_)
                | Error::Io(_)
                | Error::Parse(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
