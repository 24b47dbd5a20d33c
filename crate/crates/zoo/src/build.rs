//! Multi-generation zoo construction.

use lineage_core::{Activation, ArchSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZooError};
use crate::manifest::Zoo;
use crate::record::{ModelRecord, RegularizerSpec};
use crate::task::TaskSpec;
use crate::train::{finetune, train_parents, Finetune, Grid};

/// Everything needed to build a zoo from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooConfig {
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub source: TaskSpec,
    /// Target task of generation 2, 3, …
    pub chain: Vec<TaskSpec>,
    pub parents: usize,
    pub parent_grid: Grid,
    pub child_grid: Grid,
    pub accuracy_floor: f64,
    pub regularizer: RegularizerSpec,
}

impl ZooConfig {
    /// Six parents on 16-d, 4-class blobs fine-tuned once onto 8-class blobs
    /// (forcing a head re-initialization); 12 children per parent.
    pub fn desk(seed: u64) -> Self {
        Self {
            seed,
            hidden: vec![64, 32],
            activation: Activation::Relu,
            source: TaskSpec::blobs("source", seed.wrapping_mul(31).wrapping_add(1), 4, 16, 1.5),
            chain: vec![TaskSpec::blobs(
                "target",
                seed.wrapping_mul(31).wrapping_add(2),
                8,
                16,
                1.0,
            )],
            parents: 6,
            parent_grid: Grid::desk(300),
            child_grid: Grid {
                seeds: 3,
                ..Grid::desk(300)
            },
            accuracy_floor: 0.8,
            regularizer: RegularizerSpec::None,
        }
    }

    /// [`ZooConfig::desk`] fine-tuned down `generations` target tasks
    /// (8, 6, 8, … classes), so descendants exist `1..=generations`
    /// generations below the parents. Each of the eight parent candidates
    /// has its own initialization, so the roots are independent models
    /// rather than hyperparameter variants sharing a starting point.
    pub fn desk_generations(seed: u64, generations: usize) -> Self {
        let chain = (0..generations)
            .map(|g| {
                let classes = if g % 2 == 0 { 8 } else { 6 };
                TaskSpec::blobs(
                    &format!("target{}", g + 2),
                    seed.wrapping_mul(31).wrapping_add(2 + g as u64),
                    classes,
                    16,
                    1.0,
                )
            })
            .collect();
        let parent_grid = Grid {
            lrs: vec![1e-2],
            batches: vec![32],
            iterations: vec![300],
            seeds: 8,
        };
        Self {
            chain,
            parent_grid,
            ..Self::desk(seed)
        }
    }

    pub fn root_arch(&self) -> Result<ArchSpec> {
        let (train, _) = self.source.materialize()?;
        let mut sizes = vec![train.dims()];
        sizes.extend(&self.hidden);
        sizes.push(train.classes);
        let arch = ArchSpec {
            sizes,
            activation: self.activation,
        };
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutcome {
    pub zoo: Zoo,
    /// Root ids whose lineage produced no surviving child at some generation.
    pub dead_lineages: Vec<String>,
}

/// Fine-tunes every root down the task chain. At each generation all passing
/// children are recorded and the best-accuracy child of each lineage (lowest
/// grid index on ties) becomes the next generation's parent.
pub fn build_generations(
    roots: Vec<ModelRecord>,
    source: &TaskSpec,
    chain: &[TaskSpec],
    grid: &Grid,
    regularizer: &RegularizerSpec,
    accuracy_floor: f64,
    seed: u64,
) -> Result<BuildOutcome> {
    if chain.is_empty() {
        return Err(ZooError::Config(
            "the task chain needs at least one target task".into(),
        ));
    }
    let mut tasks = vec![source.clone()];
    tasks.extend(chain.iter().cloned());
    let mut zoo = Zoo::new(seed, tasks.clone());
    let mut live: Vec<(u64, String, ModelRecord)> = Vec::new();
    for (lineage, r) in roots.into_iter().enumerate() {
        live.push((lineage as u64, r.id().to_string(), r.clone()));
        zoo.push(r);
    }
    let mut dead = Vec::new();
    for (step, task) in chain.iter().enumerate() {
        let mut next = Vec::new();
        for (lineage, root_id, parent) in &live {
            let teacher = match regularizer {
                RegularizerSpec::Kld { teacher_id, .. } if teacher_id == "parent" => {
                    Some(parent.clone())
                }
                RegularizerSpec::Kld { teacher_id, .. } => zoo.get(teacher_id),
                _ => None,
            };
            let job = Finetune {
                task,
                task_index: step + 1,
                grid,
                regularizer,
                accuracy_floor,
                parent_task: &tasks[step],
                teacher: teacher.as_ref(),
                seed,
                stream: *lineage,
            };
            let out = finetune(parent, &job)?;
            if out.children.is_empty() {
                zoo.manifest.warnings.push(format!(
                    "lineage `{root_id}` died at generation {}: {}",
                    step + 2,
                    out.report(parent.id())
                ));
                dead.push(root_id.clone());
                continue;
            }
            let best = (0..out.children.len()).fold(0, |b, i| {
                if out.children[i].meta.test_accuracy > out.children[b].meta.test_accuracy {
                    i
                } else {
                    b
                }
            });
            for (i, mut c) in out.children.into_iter().enumerate() {
                if i == best {
                    c.meta.promoted = true;
                    next.push((*lineage, root_id.clone(), c.clone()));
                }
                zoo.push(c);
            }
        }
        live = next;
    }
    Ok(BuildOutcome {
        zoo,
        dead_lineages: dead,
    })
}

/// Trains the roots and every generation described by `cfg`.
pub fn build_zoo(cfg: &ZooConfig) -> Result<BuildOutcome> {
    cfg.regularizer.validate()?;
    let arch = cfg.root_arch()?;
    let roots = train_parents(
        &cfg.source,
        0,
        &arch,
        &cfg.parent_grid,
        cfg.parents,
        cfg.accuracy_floor,
        cfg.seed,
    )?;
    build_generations(
        roots,
        &cfg.source,
        &cfg.chain,
        &cfg.child_grid,
        &cfg.regularizer,
        cfg.accuracy_floor,
        cfg.seed,
    )
}
