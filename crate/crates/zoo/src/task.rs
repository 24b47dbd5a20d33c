//! Classification tasks the zoo trains on.

use std::path::PathBuf;

use lineage_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZooError};
use crate::idx::load_idx;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    /// Isotropic Gaussian clusters around unit-normal class centres.
    GaussianBlobs {
        seed: u64,
        classes: usize,
        dims: usize,
        spread: f64,
    },
    /// MNIST-format files; the first `subsample` rows are kept when set.
    IdxFiles {
        images: PathBuf,
        labels: PathBuf,
        subsample: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub generator: Generator,
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `N×d`
    pub x: Tensor,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.x.cols()
    }

    /// Rows `idx` in order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let d = self.dims();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.x.row(i));
        }
        Dataset {
            x: Tensor::matrix(idx.len(), d, data).expect("rows of a valid tensor"),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn head(&self, n: usize) -> Dataset {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>())
    }
}

impl TaskSpec {
    pub fn blobs(name: &str, seed: u64, classes: usize, dims: usize, spread: f64) -> Self {
        Self {
            name: name.to_string(),
            generator: Generator::GaussianBlobs {
                seed,
                classes,
                dims,
                spread,
            },
            train: 512,
            test: 256,
        }
    }

    pub fn classes(&self) -> Result<usize> {
        match &self.generator {
            Generator::GaussianBlobs { classes, .. } => Ok(*classes),
            Generator::IdxFiles { .. } => Ok(self.materialize()?.0.classes),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.test == 0 {
            return Err(ZooError::Config(format!(
                "task `{}` needs non-empty train and test splits",
                self.name
            )));
        }
        if let Generator::GaussianBlobs {
            classes,
            dims,
            spread,
            ..
        } = self.generator
        {
            if classes < 2 {
                return Err(ZooError::DegenerateTask(format!(
                    "task `{}` has {classes} class(es); classification needs at least 2",
                    self.name
                )));
            }
            if dims == 0 || !(spread > 0.0 && spread.is_finite()) {
                return Err(ZooError::Config(format!(
                    "task `{}`: dims must be positive and spread finite and positive",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Train and test splits. Bit-identical for a fixed generator.
    pub fn materialize(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        let all = match &self.generator {
            Generator::GaussianBlobs {
                seed,
                classes,
                dims,
                spread,
            } => gaussian_blobs(*seed, *classes, *dims, *spread, self.train + self.test),
            Generator::IdxFiles {
                images,
                labels,
                subsample,
            } => {
                let d = load_idx(images, labels)?;
                let d = match subsample {
                    Some(n) => d.head(*n),
                    None => d,
                };
                if d.classes < 2 {
                    return Err(ZooError::DegenerateTask(format!(
                        "task `{}` has a single class",
                        self.name
                    )));
                }
                d
            }
        };
        if all.len() < self.train + self.test {
            return Err(ZooError::Config(format!(
                "task `{}` has {} rows, {} requested",
                self.name,
                all.len(),
                self.train + self.test
            )));
        }
        let train: Vec<usize> = (0..self.train).collect();
        let test: Vec<usize> = (self.train..self.train + self.test).collect();
        Ok((all.select(&train), all.select(&test)))
    }
}

/// `n` balanced, shuffled samples.
pub fn gaussian_blobs(seed: u64, classes: usize, dims: usize, spread: f64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..classes * dims)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut y: Vec<usize> = (0..n).map(|i| i % classes).collect();
    y.shuffle(&mut rng);
    let mut x = Vec::with_capacity(n * dims);
    for &c in &y {
        for j in 0..dims {
            let e: f64 = StandardNormal.sample(&mut rng);
            x.push(centers[c * dims + j] + spread * e);
        }
    }
    Dataset {
        x: Tensor::matrix(n, dims, x).expect("finite samples"),
        y,
        classes,
    }
}
