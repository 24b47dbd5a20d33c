//! Model zoos with known lineage.
//!
//! Parents are trained on a source task over a hyperparameter grid and the
//! most accurate are kept; each is then fine-tuned down a chain of target
//! tasks, one generation per task, optionally with an EWC or KLD penalty.
//! Every record, its tuning and its test accuracy go into a JSON manifest next
//! to raw little-endian `f64` parameter blobs.

pub mod build;
pub mod error;
pub mod idx;
pub mod manifest;
pub mod record;
pub mod seed;
pub mod task;
pub mod train;

pub use build::{build_generations, build_zoo, BuildOutcome, ZooConfig};
pub use error::{Result, ZooError};
pub use idx::load_idx;
pub use manifest::{Zoo, ZooManifest, FORMAT_VERSION, MANIFEST_FILE};
pub use record::{ModelRecord, RecordMeta, RegularizerSpec, Tuning};
pub use seed::{derive_seed, init_seed};
pub use task::{Dataset, Generator, TaskSpec};
pub use train::{
    accuracy, finetune, fisher_diagonal, train_parents, Finetune, FinetuneOutcome, Grid, Rejection,
};
