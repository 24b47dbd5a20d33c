//! Cross-entropy training over parent candidates and prediction.

use lineage_core::optim::{Adam, AdamConfig};
use lineage_core::ParamVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::dataset::{DetectorSample, DetectorSplit};
use crate::error::{DetectorError, Result};
use crate::model::{detector_forward, score_and_grad, DetectorConfig, DetectorParams};

/// Logits of the no-parent extension: `[(s_m − mean s)/M …; s′]`.
pub fn no_parent_logits(scores: &[f64], s_prime: f64) -> Vec<f64> {
    let m = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / m;
    let mut z: Vec<f64> = scores.iter().map(|s| (s - mean) / m).collect();
    z.push(s_prime);
    z
}

/// Argmax of the no-parent logits; `scores.len()` means "no parent in the set".
pub fn predict_no_parent(params: &DetectorParams, scores: &[f64]) -> Result<usize> {
    let s_prime = params.no_parent_logit()?;
    if scores.is_empty() {
        return Err(DetectorError::Contract("no candidate scores".into()));
    }
    Ok(argmax(&no_parent_logits(scores, s_prime)))
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

/// Scores of every candidate (independent forward passes, run in parallel).
pub fn candidate_scores(params: &DetectorParams, sample: &DetectorSample) -> Result<Vec<f64>> {
    sample
        .inputs
        .par_iter()
        .map(|x| detector_forward(params, x))
        .collect()
}

fn logits(params: &DetectorParams, scores: &[f64]) -> Result<Vec<f64>> {
    if params.config.no_parent {
        Ok(no_parent_logits(scores, params.no_parent_logit()?))
    } else {
        Ok(scores.to_vec())
    }
}

fn cross_entropy(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let p = lineage_core::similarity::softmax(z);
    let loss = lineage_core::similarity::log_sum_exp(z) - z[label];
    let mut dz = p;
    dz[label] -= 1.0;
    (loss, dz)
}

fn check_label(params: &DetectorParams, sample: &DetectorSample) -> Result<()> {
    let m = sample.inputs.len();
    let limit = if params.config.no_parent { m + 1 } else { m };
    if m == 0 || sample.label >= limit {
        return Err(DetectorError::Contract(format!(
            "sample `{}` has label {} for {m} candidates",
            sample.child_id, sample.label
        )));
    }
    Ok(())
}

/// Predicted class (candidate index, or `M` for "no parent").
pub fn predict(params: &DetectorParams, sample: &DetectorSample) -> Result<usize> {
    Ok(argmax(&logits(params, &candidate_scores(params, sample)?)?))
}

/// Cross-entropy of one sample and its gradient.
pub fn sample_loss_grad(
    params: &DetectorParams,
    sample: &DetectorSample,
) -> Result<(f64, ParamVector)> {
    check_label(params, sample)?;
    let parts = sample
        .inputs
        .par_iter()
        .map(|x| score_and_grad(params, x))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = parts.iter().map(|(s, _)| *s).collect();
    let (loss, dz) = cross_entropy(&logits(params, &scores)?, sample.label);
    let m = scores.len();
    let ds: Vec<f64> = if params.config.no_parent {
        let mean = dz[..m].iter().sum::<f64>() / m as f64;
        dz[..m].iter().map(|d| (d - mean) / m as f64).collect()
    } else {
        dz.clone()
    };
    let mut grad = ParamVector::zeros(params.values.layout().clone());
    for ((_, g), d) in parts.iter().zip(&ds) {
        grad.values_mut()
            .iter_mut()
            .zip(g.values())
            .for_each(|(a, b)| *a += d * b);
    }
    if params.config.no_parent {
        let i = grad
            .layout()
            .index_of("no_parent")
            .expect("no-parent block");
        grad.block_values_mut(i)[0] = dz[m];
    }
    Ok((loss, grad))
}

/// Mean loss and accuracy over `idx`.
pub fn evaluate(
    params: &DetectorParams,
    samples: &[DetectorSample],
    idx: &[usize],
) -> Result<(f64, f64)> {
    let (mut loss, mut hits) = (0.0, 0usize);
    for &i in idx {
        let s = &samples[i];
        check_label(params, s)?;
        let z = logits(params, &candidate_scores(params, s)?)?;
        loss += cross_entropy(&z, s.label).0;
        hits += usize::from(argmax(&z) == s.label);
    }
    let n = idx.len().max(1) as f64;
    Ok((loss / n, hits as f64 / n))
}

/// Fraction of the "no parent" samples among `idx` predicted as such, or
/// `None` when `idx` holds no such sample.
pub fn no_parent_recall(
    params: &DetectorParams,
    samples: &[DetectorSample],
    idx: &[usize],
) -> Result<Option<f64>> {
    let orphans: Vec<&DetectorSample> = idx
        .iter()
        .map(|&i| &samples[i])
        .filter(|s| !s.has_parent())
        .collect();
    if orphans.is_empty() {
        return Ok(None);
    }
    let mut hits = 0usize;
    for s in &orphans {
        hits += usize::from(predict(params, s)? == s.label);
    }
    Ok(Some(hits as f64 / orphans.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Drives the per-epoch sample order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.01,
            batch: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

pub const LOG_CSV_HEADER: &str = "epoch,train_loss,val_loss,val_accuracy";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDetector {
    /// Parameters of the epoch with the best validation accuracy (lowest
    /// validation loss among equally accurate epochs).
    pub params: DetectorParams,
    pub best_epoch: usize,
    /// Epoch 0 is the initialization.
    pub log: Vec<EpochLog>,
}

impl TrainedDetector {
    pub fn log_csv(&self) -> String {
        let mut s = format!("{LOG_CSV_HEADER}\n");
        for e in &self.log {
            s += &format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_accuracy
            );
        }
        s
    }
}

/// Everything needed to continue training exactly where it stopped.
///
/// The sample order of epoch `e` depends only on `(seed, e)`, so a run
/// resumed from a saved state replays the same updates as an uninterrupted
/// one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: DetectorConfig,
    /// Last completed epoch (0 = initialization evaluated).
    pub epoch: usize,
    pub values: Vec<f64>,
    pub adam: Adam,
    pub best_epoch: usize,
    pub best_values: Vec<f64>,
    pub best_val_accuracy: f64,
    pub best_val_loss: f64,
    pub log: Vec<EpochLog>,
}

fn check_run(samples: &[DetectorSample], split: &DetectorSplit, cfg: &TrainConfig) -> Result<()> {
    for (name, part) in [("train", &split.train), ("validation", &split.validation)] {
        if part.is_empty() {
            return Err(DetectorError::Config(format!(
                "the {name} partition is empty"
            )));
        }
    }
    if cfg.batch == 0 || !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(DetectorError::Config(
            "batch must be positive and lr finite and positive".into(),
        ));
    }
    if let Some(&i) = split
        .train
        .iter()
        .chain(&split.validation)
        .chain(&split.test)
        .find(|&&i| i >= samples.len())
    {
        return Err(DetectorError::Config(format!(
            "split names sample {i} of {}",
            samples.len()
        )));
    }
    Ok(())
}

impl TrainState {
    /// Evaluates the initialization as epoch 0.
    pub fn start(
        init: DetectorParams,
        samples: &[DetectorSample],
        split: &DetectorSplit,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        check_run(samples, split, cfg)?;
        let (train_loss, _) = evaluate(&init, samples, &split.train)?;
        let (val_loss, val_accuracy) = evaluate(&init, samples, &split.validation)?;
        let values = init.values.values().to_vec();
        Ok(Self {
            adam: Adam::new(AdamConfig::with_lr(cfg.lr), values.len()),
            config: init.config,
            epoch: 0,
            best_epoch: 0,
            best_values: values.clone(),
            values,
            best_val_accuracy: val_accuracy,
            best_val_loss: val_loss,
            log: vec![EpochLog {
                epoch: 0,
                train_loss,
                val_loss,
                val_accuracy,
            }],
        })
    }

    fn params(&self, values: &[f64]) -> Result<DetectorParams> {
        let values = ParamVector::new(Arc::new(self.config.layout()), values.to_vec())?;
        Ok(DetectorParams {
            config: self.config.clone(),
            values,
        })
    }

    /// Parameters after the last completed epoch.
    pub fn current(&self) -> Result<DetectorParams> {
        self.params(&self.values)
    }

    /// Runs epochs `self.epoch + 1 ..= cfg.epochs`.
    pub fn run(
        &mut self,
        samples: &[DetectorSample],
        split: &DetectorSplit,
        cfg: &TrainConfig,
    ) -> Result<()> {
        check_run(samples, split, cfg)?;
        let mut params = self.current()?;
        for epoch in self.epoch + 1..=cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64);
            let mut order = split.train.clone();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch) {
                let mut grad = ParamVector::zeros(params.values.layout().clone());
                for &i in chunk {
                    let (loss, g) = sample_loss_grad(&params, &samples[i])?;
                    total += loss;
                    grad.values_mut()
                        .iter_mut()
                        .zip(g.values())
                        .for_each(|(a, b)| *a += b / chunk.len() as f64);
                }
                self.adam.step(&mut params.values, &grad);
                if !params.values.is_finite() {
                    return Err(DetectorError::Core(lineage_core::Error::NonFinite {
                        layer: format!("epoch {epoch}"),
                    }));
                }
            }
            let (val_loss, val_accuracy) = evaluate(&params, samples, &split.validation)?;
            self.log.push(EpochLog {
                epoch,
                train_loss: total / order.len() as f64,
                val_loss,
                val_accuracy,
            });
            // Small validation sets saturate in accuracy early; loss breaks ties.
            if val_accuracy > self.best_val_accuracy
                || (val_accuracy == self.best_val_accuracy && val_loss < self.best_val_loss)
            {
                self.best_epoch = epoch;
                self.best_values = params.values.values().to_vec();
                self.best_val_accuracy = val_accuracy;
                self.best_val_loss = val_loss;
            }
            self.epoch = epoch;
            self.values = params.values.values().to_vec();
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<TrainedDetector> {
        Ok(TrainedDetector {
            params: self.params(&self.best_values)?,
            best_epoch: self.best_epoch,
            log: self.log.clone(),
        })
    }
}

/// Trains from `init` for `cfg.epochs` epochs and returns the best checkpoint.
pub fn train_detector(
    init: DetectorParams,
    samples: &[DetectorSample],
    split: &DetectorSplit,
    cfg: &TrainConfig,
) -> Result<TrainedDetector> {
    let mut state = TrainState::start(init, samples, split, cfg)?;
    state.run(samples, split, cfg)?;
    state.finish()
}
