use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DetectorError>;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error(transparent)]
    Core(#[from] lineage_core::Error),

    #[error(transparent)]
    Zoo(#[from] lineage_zoo::ZooError),

    #[error(transparent)]
    Match(#[from] lineage_matcher::MatchError),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DetectorError + '_ {
    move |source| DetectorError::Io {
        path: path.to_path_buf(),
        source,
    }
}
