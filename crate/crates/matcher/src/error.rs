use thiserror::Error;

pub type Result<T> = std::result::Result<T, MatchError>;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error(transparent)]
    Core(#[from] lineage_core::Error),

    #[error(transparent)]
    Zoo(#[from] lineage_zoo::ZooError),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}
