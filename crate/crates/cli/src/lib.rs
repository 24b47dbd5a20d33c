//! The `lineage` command line: build zoos, run learning-free detection,
//! evaluate methods over a zoo and train the learned detector.
//!
//! Exit codes: 0 success, 1 configuration or user error, 2 completed with
//! warnings (dead lineages, excluded descendants, `n/a` oracle cells).

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use cli::{run, Cli};
pub use config::{ResolvedConfig, RunConfig};
pub use error::{CliError, Result};
