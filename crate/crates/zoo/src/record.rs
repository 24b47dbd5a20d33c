use lineage_core::{ArchSpec, ParamVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZooError};

/// Extra fine-tuning loss terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RegularizerSpec {
    #[default]
    None,
    /// `weight · Σ_j F_j (θ_j − θ_p,j)²` with a diagonal Fisher from
    /// `fisher_samples` parent-task samples.
    Ewc { weight: f64, fisher_samples: usize },
    /// `weight · T² · KL(softmax(teacher/T) ‖ softmax(student/T))`. The teacher
    /// id `parent` names the model being fine-tuned.
    Kld {
        teacher_id: String,
        weight: f64,
        temperature: f64,
    },
}

impl RegularizerSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::None => Ok(()),
            Self::Ewc {
                weight,
                fisher_samples,
            } => {
                if !(*weight >= 0.0 && weight.is_finite()) || *fisher_samples == 0 {
                    return Err(ZooError::Config(format!(
                        "ewc needs a finite weight >= 0 and at least one Fisher sample, got {weight} / {fisher_samples}"
                    )));
                }
                Ok(())
            }
            Self::Kld {
                weight,
                temperature,
                ..
            } => {
                if !(*temperature > 0.0 && temperature.is_finite()) {
                    return Err(ZooError::Config(format!(
                        "kld temperature must be > 0, got {temperature}"
                    )));
                }
                if !(*weight >= 0.0 && weight.is_finite()) {
                    return Err(ZooError::Config(format!(
                        "kld weight must be finite and >= 0, got {weight}"
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub lr: f64,
    pub batch: usize,
    pub iterations: usize,
    /// Drives batch order (and head re-initialization for children).
    pub seed: u64,
    /// Initialization seed of a root; shared by roots with the same grid seed index.
    pub init_seed: Option<u64>,
    pub regularizer: RegularizerSpec,
}

/// Everything about a model except its parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub arch: ArchSpec,
    /// 1 for roots.
    pub generation: u32,
    pub parent_id: Option<String>,
    /// Index into the manifest's task list.
    pub task: usize,
    pub tuning: Tuning,
    pub test_accuracy: f64,
    /// Parent of record for the next generation of its lineage (always true for roots).
    pub promoted: bool,
    /// Parameter blob, relative to the manifest directory.
    pub blob: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub meta: RecordMeta,
    pub params: ParamVector,
}

impl ModelRecord {
    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.meta.arch
    }

    pub fn subject(&self) -> lineage_core::similarity::Subject<'_> {
        lineage_core::similarity::Subject::new(&self.meta.id, &self.meta.arch, &self.params)
    }
}

pub(crate) fn blob_path(id: &str) -> String {
    format!("blobs/{id}.f64")
}
