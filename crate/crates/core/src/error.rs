use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition or invariant of a domain operation was violated.
    #[error("domain error: {0}")]
    Domain(String),
    /// A file could not be turned into a valid value.
    #[error("load error in {path}: {reason}")]
    Load { path: String, reason: String },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain<S: Into<String>>(msg: S) -> Self {
        Error::Domain(msg.into())
    }

    pub fn load<P: Into<String>, S: Into<String>>(path: P, reason: S) -> Self {
        Error::Load { path: path.into(), reason: reason.into() }
    }
}
