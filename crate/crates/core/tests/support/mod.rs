#![allow(dead_code)]

use lineage_core::network::{init_params, jacobian, DEFAULT_JACOBIAN_BUDGET};
use lineage_core::similarity::Subject;
use lineage_core::{Activation, ArchSpec, ParamVector, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_inputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    let data = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(n, d, data).unwrap()
}

/// Random small MLP with its parameters, and a perturbed child.
pub struct Pair {
    pub arch: ArchSpec,
    pub parent: ParamVector,
    pub child: ParamVector,
}

impl Pair {
    pub fn random(rng: &mut ChaCha8Rng, scale: f64) -> Self {
        let d_in = rng.random_range(2..=5);
        let h1 = rng.random_range(3..=8);
        let h2 = rng.random_range(2..=6);
        let k = rng.random_range(2..=4);
        let activation = if rng.random_bool(0.5) {
            Activation::Relu
        } else {
            Activation::Tanh
        };
        let arch = ArchSpec {
            sizes: vec![d_in, h1, h2, k],
            activation,
        };
        Self::with_arch(rng, arch, scale)
    }

    pub fn with_arch(rng: &mut ChaCha8Rng, arch: ArchSpec, scale: f64) -> Self {
        let parent = init_params(&arch, rng);
        let mut child = parent.clone();
        for v in child.values_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v += scale * e;
        }
        Self {
            arch,
            parent,
            child,
        }
    }

    pub fn parent(&self) -> Subject<'_> {
        Subject::new("parent", &self.arch, &self.parent)
    }

    pub fn child(&self) -> Subject<'_> {
        Subject::new("child", &self.arch, &self.child)
    }
}

/// Σ_i w_i · J_i, built from explicit per-row Jacobians.
pub fn explicit_contraction(
    arch: &ArchSpec,
    params: &ParamVector,
    inputs: &Tensor,
    weights: &Tensor,
    tap: &str,
) -> Vec<f64> {
    let p = params.len();
    let mut out = vec![0.0; p];
    for i in 0..inputs.rows() {
        let x = Tensor::matrix(1, inputs.cols(), inputs.row(i).to_vec()).unwrap();
        let j = jacobian(arch, params, &x, tap, DEFAULT_JACOBIAN_BUDGET).unwrap();
        let k = j.rows();
        for r in 0..k {
            let w = weights.get(i, r);
            for c in 0..p {
                out[c] += w * j.data()[r * p + c];
            }
        }
    }
    out
}

/// Plain nested-loop forward pass, independent of the tape.
pub fn hand_forward(arch: &ArchSpec, params: &ParamVector, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let l = arch.sizes.len() - 1;
    for i in 0..l {
        let w = params.block_values(2 * i);
        let b = params.block_values(2 * i + 1);
        let (din, dout) = (arch.sizes[i], arch.sizes[i + 1]);
        let mut z = vec![0.0; dout];
        for o in 0..dout {
            z[o] = b[o] + (0..din).map(|j| w[o * din + j] * h[j]).sum::<f64>();
        }
        if i + 1 < l {
            for v in &mut z {
                *v = match arch.activation {
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                };
            }
        }
        h = z;
    }
    h
}
