//! Training of parents and fine-tuning of children.

use lineage_core::network::{forward, init_params};
use lineage_core::optim::{Adam, AdamConfig};
use lineage_core::{ArchSpec, ParamVector, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZooError};
use crate::record::{blob_path, ModelRecord, RecordMeta, RegularizerSpec, Tuning};
use crate::seed::{derive_seed, init_seed};
use crate::task::{Dataset, TaskSpec};

/// Hyperparameter grid. The `seeds` axis is the random seed of a run: grid
/// points sharing a seed index start from the same initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lrs: Vec<f64>,
    pub batches: Vec<usize>,
    pub iterations: Vec<usize>,
    pub seeds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub lr: f64,
    pub batch: usize,
    pub iterations: usize,
    pub seed_index: usize,
}

impl Grid {
    pub fn desk(iterations: usize) -> Self {
        Self {
            lrs: vec![1e-2, 1e-3],
            batches: vec![32, 128],
            iterations: vec![iterations],
            seeds: 2,
        }
    }

    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &lr in &self.lrs {
            for &batch in &self.batches {
                for &iterations in &self.iterations {
                    for seed_index in 0..self.seeds {
                        out.push(GridPoint {
                            index: out.len(),
                            lr,
                            batch,
                            iterations,
                            seed_index,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.points().is_empty() {
            return Err(ZooError::Config("hyperparameter grid is empty".into()));
        }
        if self.lrs.iter().any(|&l| !(l > 0.0 && l.is_finite())) || self.batches.contains(&0) {
            return Err(ZooError::Config(
                "learning rates must be positive and batches non-zero".into(),
            ));
        }
        Ok(())
    }
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy(arch: &ArchSpec, params: &ParamVector, data: &Dataset) -> Result<f64> {
    let f = forward(arch, params, &data.x, &[])?;
    let out = f.output();
    let hits = (0..data.len())
        .filter(|&i| {
            let row = out.row(i);
            let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            best == data.y[i]
        })
        .count();
    Ok(hits as f64 / data.len() as f64)
}

fn one_hot_weights(y: &[usize], classes: usize, scale: f64) -> Tensor {
    let mut w = vec![0.0; y.len() * classes];
    for (i, &c) in y.iter().enumerate() {
        w[i * classes + c] = scale;
    }
    Tensor::matrix(y.len(), classes, w).expect("finite weights")
}

/// Diagonal Fisher: mean squared per-sample gradient of `log p(y_i | x_i)`
/// over the first `samples` rows of `data` (labels are the recorded ones).
pub fn fisher_diagonal(
    arch: &ArchSpec,
    params: &ParamVector,
    data: &Dataset,
    samples: usize,
) -> Result<Vec<f64>> {
    let n = samples.min(data.len());
    let mut f = vec![0.0; params.len()];
    for i in 0..n {
        let one = data.select(&[i]);
        let mut fw = forward(arch, params, &one.x, &[])?;
        let lsm = fw.tape.log_softmax_rows(fw.output);
        let root = fw
            .tape
            .weighted_sum(lsm, one_hot_weights(&one.y, arch.output_dim(), 1.0));
        let g = fw.tape.grad_scalar(root)?;
        for (acc, v) in f.iter_mut().zip(g.values()) {
            *acc += v * v / n as f64;
        }
    }
    Ok(f)
}

/// Fine-tuning penalty, resolved against concrete parameters.
pub(crate) enum Penalty<'a> {
    None,
    Ewc {
        anchor: Vec<f64>,
        fisher: Vec<f64>,
        weight: f64,
    },
    Kld {
        teacher: &'a ModelRecord,
        weight: f64,
        temperature: f64,
    },
}

/// Mini-batch cross-entropy training with the moment optimizer; the batch
/// order comes from `rng`, reshuffled every pass over the data.
pub(crate) fn train_loop(
    arch: &ArchSpec,
    mut params: ParamVector,
    data: &Dataset,
    lr: f64,
    batch: usize,
    iterations: usize,
    penalty: &Penalty,
    rng: &mut ChaCha8Rng,
) -> Result<ParamVector> {
    let k = arch.output_dim();
    let mut adam = Adam::new(AdamConfig::with_lr(lr), params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let batch = batch.min(data.len());
    for _ in 0..iterations {
        if cursor + batch > order.len() {
            order.shuffle(rng);
            cursor = 0;
        }
        let b = data.select(&order[cursor..cursor + batch]);
        cursor += batch;
        let mut fw = forward(arch, &params, &b.x, &[])?;
        let lsm = fw.tape.log_softmax_rows(fw.output);
        let mut root = fw
            .tape
            .weighted_sum(lsm, one_hot_weights(&b.y, k, -1.0 / batch as f64));
        if let Penalty::Kld {
            teacher,
            weight,
            temperature,
        } = penalty
        {
            let t_out = forward(teacher.arch(), &teacher.params, &b.x, &[])?;
            let q = softmax_rows(&t_out.output().scale(1.0 / temperature));
            let scaled = fw.tape.scale(fw.output, 1.0 / temperature);
            let slsm = fw.tape.log_softmax_rows(scaled);
            // KL(q‖p) = Σ q log q − Σ q log p; the first term is constant in θ.
            let w = q.scale(-weight * temperature * temperature / batch as f64);
            let kl = fw.tape.weighted_sum(slsm, w);
            root = fw.tape.add(root, kl);
        }
        let mut grad = fw.tape.grad_scalar(root)?;
        if let Penalty::Ewc {
            anchor,
            fisher,
            weight,
        } = penalty
        {
            let g = grad.values_mut();
            let p = params.values();
            for j in 0..g.len() {
                g[j] += 2.0 * weight * fisher[j] * (p[j] - anchor[j]);
            }
        }
        adam.step(&mut params, &grad);
        if !params.is_finite() {
            return Err(lineage_core::Error::NonFinite {
                layer: "parameters".into(),
            }
            .into());
        }
    }
    Ok(params)
}

fn softmax_rows(t: &Tensor) -> Tensor {
    let (n, k) = (t.rows(), t.cols());
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        out.extend(lineage_core::similarity::softmax(t.row(i)));
    }
    Tensor::matrix(n, k, out).expect("finite probabilities")
}

fn check_task_arch(task: &TaskSpec, arch: &ArchSpec, train: &Dataset) -> Result<()> {
    if train.dims() != arch.input_dim() {
        return Err(ZooError::Config(format!(
            "task `{}` has {} input dimensions, architecture expects {}",
            task.name,
            train.dims(),
            arch.input_dim()
        )));
    }
    Ok(())
}

/// Trains one model per grid point and keeps the `count` best by test accuracy
/// among those at or above `accuracy_floor` (ties keep grid order).
pub fn train_parents(
    task: &TaskSpec,
    task_index: usize,
    arch: &ArchSpec,
    grid: &Grid,
    count: usize,
    accuracy_floor: f64,
    seed: u64,
) -> Result<Vec<ModelRecord>> {
    grid.validate()?;
    arch.validate()?;
    let (train, test) = task.materialize()?;
    check_task_arch(task, arch, &train)?;
    if arch.output_dim() != train.classes {
        return Err(ZooError::Config(format!(
            "architecture has {} outputs for {} classes",
            arch.output_dim(),
            train.classes
        )));
    }
    let trained: Vec<(GridPoint, u64, ParamVector, f64)> = grid
        .points()
        .into_par_iter()
        .map(|pt| {
            let s = derive_seed(seed, pt.index as u64, 1);
            let init = init_params(
                arch,
                &mut ChaCha8Rng::seed_from_u64(init_seed(seed, pt.seed_index)),
            );
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let p = train_loop(
                arch,
                init,
                &train,
                pt.lr,
                pt.batch,
                pt.iterations,
                &Penalty::None,
                &mut rng,
            )?;
            let acc = accuracy(arch, &p, &test)?;
            Ok((pt, s, p, acc))
        })
        .collect::<Result<_>>()?;
    let mut passed: Vec<&(GridPoint, u64, ParamVector, f64)> =
        trained.iter().filter(|t| t.3 >= accuracy_floor).collect();
    if passed.len() < count {
        return Err(ZooError::Shortfall {
            needed: count,
            passed: passed.len(),
            accuracies: trained.iter().map(|t| t.3).collect(),
        });
    }
    passed.sort_by(|a, b| b.3.total_cmp(&a.3).then(a.0.index.cmp(&b.0.index)));
    Ok(passed
        .into_iter()
        .take(count)
        .enumerate()
        .map(|(rank, (pt, s, p, acc))| {
            let id = format!("g1-{rank}");
            ModelRecord {
                meta: RecordMeta {
                    blob: blob_path(&id),
                    id,
                    arch: arch.clone(),
                    generation: 1,
                    parent_id: None,
                    task: task_index,
                    tuning: Tuning {
                        lr: pt.lr,
                        batch: pt.batch,
                        iterations: pt.iterations,
                        seed: *s,
                        init_seed: Some(init_seed(seed, pt.seed_index)),
                        regularizer: RegularizerSpec::None,
                    },
                    test_accuracy: *acc,
                    promoted: true,
                },
                params: p.clone(),
            }
        })
        .collect())
}

/// One fine-tuning request: a parent's grid of children on a target task.
#[derive(Debug, Clone)]
pub struct Finetune<'a> {
    pub task: &'a TaskSpec,
    pub task_index: usize,
    pub grid: &'a Grid,
    pub regularizer: &'a RegularizerSpec,
    pub accuracy_floor: f64,
    /// Task the parent was trained on (EWC Fisher estimation).
    pub parent_task: &'a TaskSpec,
    /// Resolved KLD teacher.
    pub teacher: Option<&'a ModelRecord>,
    pub seed: u64,
    /// Distinguishes lineages fine-tuned within one generation.
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub grid_index: usize,
    pub test_accuracy: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub children: Vec<ModelRecord>,
    pub rejected: Vec<Rejection>,
}

impl FinetuneOutcome {
    /// Human-readable summary; names the vacuous case explicitly.
    pub fn report(&self, parent_id: &str) -> String {
        if self.children.is_empty() {
            let accs: Vec<String> = self
                .rejected
                .iter()
                .map(|r| format!("{:.3}", r.test_accuracy))
                .collect();
            format!(
                "no children passed for parent `{parent_id}` (test accuracies: [{}])",
                accs.join(", ")
            )
        } else {
            format!(
                "{} children kept, {} rejected for parent `{parent_id}`",
                self.children.len(),
                self.rejected.len()
            )
        }
    }
}

/// Child architecture and starting point: the parent's parameters, with the
/// head re-initialized when the target class count differs.
fn child_start(
    parent: &ModelRecord,
    classes: usize,
    rng: &mut ChaCha8Rng,
) -> (ArchSpec, ParamVector) {
    let mut arch = parent.arch().clone();
    if arch.output_dim() == classes {
        return (arch, parent.params.clone());
    }
    *arch.sizes.last_mut().expect("validated arch") = classes;
    let mut p = init_params(&arch, rng);
    let head = [arch.n_layers() * 2 - 2, arch.n_layers() * 2 - 1];
    for i in 0..p.layout().blocks().len() {
        if !head.contains(&i) {
            p.block_values_mut(i)
                .copy_from_slice(parent.params.block_values(i));
        }
    }
    (arch, p)
}

/// Fine-tunes `parent` at every grid point; children below the accuracy floor
/// or identical to the parent are rejected.
pub fn finetune(parent: &ModelRecord, job: &Finetune) -> Result<FinetuneOutcome> {
    job.grid.validate()?;
    job.regularizer.validate()?;
    let (train, test) = job.task.materialize()?;
    check_task_arch(job.task, parent.arch(), &train)?;
    let generation = parent.meta.generation + 1;
    let fisher = match job.regularizer {
        RegularizerSpec::Ewc { fisher_samples, .. } => {
            let (ptrain, _) = job.parent_task.materialize()?;
            Some(fisher_diagonal(
                parent.arch(),
                &parent.params,
                &ptrain,
                *fisher_samples,
            )?)
        }
        _ => None,
    };
    if let RegularizerSpec::Kld { teacher_id, .. } = job.regularizer {
        let teacher = job
            .teacher
            .ok_or_else(|| ZooError::Config(format!("kld teacher `{teacher_id}` not found")))?;
        if teacher.arch().output_dim() != train.classes
            || teacher.arch().input_dim() != train.dims()
        {
            return Err(ZooError::Config(format!(
                "kld teacher `{}` is not shaped for task `{}`",
                teacher.id(),
                job.task.name
            )));
        }
    }
    let results: Vec<(GridPoint, u64, ArchSpec, ParamVector, f64)> = job
        .grid
        .points()
        .into_par_iter()
        .map(|pt| {
            let s = derive_seed(job.seed, (job.stream << 32) | pt.index as u64, generation);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (arch, start) = child_start(parent, train.classes, &mut rng);
            let penalty = match (job.regularizer, &fisher) {
                (RegularizerSpec::Ewc { weight, .. }, Some(f)) => {
                    // Only blocks shared with the parent (same name and shape) are anchored.
                    let mut anchor = start.values().to_vec();
                    let mut fi = vec![0.0; start.len()];
                    let pl = parent.params.layout();
                    for (i, b) in start.layout().blocks().iter().enumerate() {
                        if let Some(pb) = pl.block(&b.name).filter(|pb| pb.shape == b.shape) {
                            anchor[b.range()].copy_from_slice(&parent.params.values()[pb.range()]);
                            fi[b.range()].copy_from_slice(&f[pb.range()]);
                        }
                        debug_assert_eq!(start.block_values(i).len(), b.len());
                    }
                    Penalty::Ewc {
                        anchor,
                        fisher: fi,
                        weight: *weight,
                    }
                }
                (
                    RegularizerSpec::Kld {
                        weight,
                        temperature,
                        ..
                    },
                    _,
                ) => Penalty::Kld {
                    teacher: job.teacher.expect("checked above"),
                    weight: *weight,
                    temperature: *temperature,
                },
                _ => Penalty::None,
            };
            let p = train_loop(
                &arch,
                start,
                &train,
                pt.lr,
                pt.batch,
                pt.iterations,
                &penalty,
                &mut rng,
            )?;
            let acc = accuracy(&arch, &p, &test)?;
            Ok((pt, s, arch, p, acc))
        })
        .collect::<Result<_>>()?;
    let mut out = FinetuneOutcome {
        children: Vec::new(),
        rejected: Vec::new(),
    };
    for (pt, s, arch, p, acc) in results {
        let reason = if arch == *parent.arch() && p == parent.params {
            Some("degenerate: parameters identical to the parent".to_string())
        } else if acc < job.accuracy_floor {
            Some(format!(
                "test accuracy {acc:.4} below floor {}",
                job.accuracy_floor
            ))
        } else {
            None
        };
        if let Some(reason) = reason {
            out.rejected.push(Rejection {
                grid_index: pt.index,
                test_accuracy: acc,
                reason,
            });
            continue;
        }
        let id = format!("g{generation}-{}-{}", job.stream, pt.index);
        out.children.push(ModelRecord {
            meta: RecordMeta {
                blob: blob_path(&id),
                id,
                arch,
                generation,
                parent_id: Some(parent.id().to_string()),
                task: job.task_index,
                tuning: Tuning {
                    lr: pt.lr,
                    batch: pt.batch,
                    iterations: pt.iterations,
                    seed: s,
                    init_seed: None,
                    regularizer: job.regularizer.clone(),
                },
                test_accuracy: acc,
                promoted: false,
            },
            params: p,
        });
    }
    Ok(out)
}
