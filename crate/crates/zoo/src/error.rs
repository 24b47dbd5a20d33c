use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ZooError>;

#[derive(Debug, Error)]
pub enum ZooError {
    #[error(transparent)]
    Core(#[from] lineage_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: malformed IDX data at byte offset {offset}: {reason}", path.display())]
    Format {
        path: PathBuf,
        offset: usize,
        reason: String,
    },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("only {passed} of {needed} requested models passed training; test accuracies: {accuracies:?}")]
    Shortfall {
        needed: usize,
        passed: usize,
        accuracies: Vec<f64>,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("manifest json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ZooError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
