use std::io;

use thiserror::Error;

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (first input {first_input})")]
    NonFiniteLoss { epoch: usize, batch: usize, first_input: usize },
    #[error("checkpoint error in {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Core(#[from] actsum_core::Error),
}

impl ModelError {
    pub fn domain(msg: impl Into<String>) -> Self {
        ModelError::Domain(msg.into())
    }

    pub fn checkpoint(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::Checkpoint { path: path.into(), reason: reason.into() }
    }
}
