//! The learned lineage detector.
//!
//! A parent candidate and a child are compared through stacked planes of
//! their weights and of their features on shared probe inputs. Each
//! modality has a small convolutional encoder producing one token; a class
//! token and the modality tokens go through one transformer layer, and a
//! linear head turns the class-token output into a score. Scores of all
//! candidates form the logits of a cross-entropy over "which one is the
//! parent", optionally extended with a learned "no parent" logit.

pub mod dataset;
pub mod error;
pub mod io;
pub mod model;
pub mod planes;
pub mod train;

pub use dataset::{
    build_samples, most_isolated_candidate, stacked_input, DetectorSample, DetectorSplit,
    PlaneSpec, SampleConfig,
};
pub use error::{DetectorError, Result};
pub use io::{
    load_detector, load_train_state, save_detector, save_train_state, DETECTOR_FORMAT_VERSION,
};
pub use model::{
    detector_forward, record_score, score_and_grad, DetectorConfig, DetectorParams, StackedInput,
};
pub use planes::{reshape_to_planes, Plane, PlaneShape};
pub use train::{
    candidate_scores, evaluate, no_parent_logits, no_parent_recall, predict, predict_no_parent,
    sample_loss_grad, train_detector, EpochLog, TrainConfig, TrainState, TrainedDetector,
    LOG_CSV_HEADER,
};
