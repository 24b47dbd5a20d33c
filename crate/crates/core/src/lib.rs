//! Core numerics for parent/child lineage detection of neural networks.
//!
//! - [`tensor`], [`params`], [`tape`]: dense `f64` tensors, flat parameter
//!   vectors and a reverse-mode tape.
//! - [`arch`], [`network`]: subject MLPs, forward passes, gradients,
//!   explicit Jacobians and the one-pass weighted-output gradient.
//! - [`similarity`]: baseline similarity metrics, their linearized
//!   one-pass approximations and the step-by-step oracle.
//! - [`optim`]: the moment-based optimizer shared by every trainer.

pub mod arch;
pub mod error;
pub mod gradcheck;
pub mod network;
pub mod optim;
pub mod params;
pub mod similarity;
pub mod tape;
pub mod tensor;

pub use arch::{Activation, ArchSpec};
pub use error::{Error, Result};
pub use params::{Layout, ParamVector};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
