//! Learning-free lineage scoring.

mod kind;
mod linearized;
mod lstsq;
mod metrics;
mod pi;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use kind::{MetricKind, DEFAULT_P, DEFAULT_T};
pub use linearized::{
    aligned_delta, approx_similarity, approx_terms, linearized_outputs, oracle_similarity,
    ApproxScore, ApproxTerms, LinearizedEval, OracleScore, Subject,
};
pub use lstsq::{
    solve_map_w, solve_shift_z, synthesize_child_outputs, WSolution, ZSolution, PINV_RTOL,
};
pub use metrics::{baseline_similarity, log_sum_exp, sign, softmax};
pub use pi::{pi_weights, PiWeights};
pub use report::{SimilarityReport, SimilarityRow, SIMILARITY_CSV_HEADER};

/// Default α search grid.
pub const ALPHA_GRID: [f64; 3] = [0.001, 0.01, 0.1];

/// Features of one model at one tap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBatch {
    pub model_id: String,
    pub tap: String,
    pub values: Tensor,
}

/// Row-wise differences `d_i = f_p(x_i) − f_c(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffBatch(Tensor);

impl DiffBatch {
    pub fn new(parent: &FeatureBatch, child: &FeatureBatch) -> Result<Self> {
        if parent.tap != child.tap {
            return Err(Error::Contract(format!(
                "taps `{}` and `{}` differ",
                parent.tap, child.tap
            )));
        }
        Ok(Self(parent.values.sub(&child.values)?))
    }

    pub fn rows(&self) -> &Tensor {
        &self.0
    }
}
