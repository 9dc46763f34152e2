use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = WorkbenchError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{}: recorded config hash {found} differs from {expected}; use a fresh output directory", .path.display())]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{}: {message}", .path.display())]
    Missing { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] adashare_core::Error),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl WorkbenchError {
    pub fn config(message: impl Into<String>) -> Self {
        Self::Config(message.into())
    }

    pub fn missing(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Missing {
            path: path.into(),
            message: message.into(),
        }
    }
}
