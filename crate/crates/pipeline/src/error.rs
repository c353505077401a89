use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Model(#[from] actsum_models::ModelError),
    #[error(transparent)]
    Core(#[from] actsum_core::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub fn domain(msg: impl Into<String>) -> Self {
        PipelineError::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
