//! Closed-form solutions of the two minimal-distance linear fits.
//!
//! * Per sample: the matrix `W(x)` minimizing `‖f_p(x) + W(x)·Δθ − f_c(x)‖²`
//!   is the rank-one `(f_c − f_p)·Δθᵀ / ‖Δθ‖²`.
//! * Shared: the vector `Z` minimizing `Σ_i ‖f_p(x_i) + J_i·Z − f_c(x_i)‖²`
//!   solves `Σ J_iᵀJ_i·Z = Σ J_iᵀ(f_c − f_p)`; the minimum-norm solution is
//!   taken through a thresholded eigen-decomposition of the Gram matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::network::{features, jacobian};
use crate::params::ParamVector;
use crate::tensor::Tensor;

use super::linearized::{aligned_delta, Subject};

/// Relative eigenvalue cut-off of the pseudo-inverse.
pub const PINV_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct WSolution {
    /// `K×|θ|`
    pub w: Tensor,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZSolution {
    pub z: ParamVector,
    /// `sqrt(Σ_i ‖f_p(x_i) + J_i·Z − f_c(x_i)‖²)`
    pub residual: f64,
    pub rank: usize,
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|a| a * a).sum::<f64>().sqrt()
}

/// Per-sample optimum for a single input row `x`.
pub fn solve_map_w(parent: Subject, child: Subject, x: &Tensor, tap: &str) -> Result<WSolution> {
    if x.rows() != 1 {
        return Err(Error::Contract(
            "solve_map_w takes a single input row".into(),
        ));
    }
    let delta = aligned_delta(parent, child, tap)?;
    let dd = delta.dot(&delta)?;
    if dd == 0.0 {
        return Err(Error::Degenerate(
            "parent and child parameters coincide".into(),
        ));
    }
    let fp = features(parent.arch, parent.params, x, tap)?;
    let fc = features(child.arch, child.params, x, tap)?;
    let diff = fc.sub(&fp)?;
    let (k, p) = (diff.numel(), delta.len());
    let mut w = Vec::with_capacity(k * p);
    for &dk in diff.data() {
        w.extend(delta.values().iter().map(|d| dk * d / dd));
    }
    let residual = norm((0..k).map(|r| {
        let wd: f64 = w[r * p..(r + 1) * p]
            .iter()
            .zip(delta.values())
            .map(|(a, b)| a * b)
            .sum();
        fp.data()[r] + wd - fc.data()[r]
    }));
    Ok(WSolution {
        w: Tensor::from_raw(vec![k, p], w),
        residual,
    })
}

/// Stacked explicit Jacobians of every input row, `(N·K)×|θ|`.
fn stacked_jacobian(
    parent: Subject,
    inputs: &Tensor,
    tap: &str,
    budget: usize,
) -> Result<DMatrix<f64>> {
    let k = parent.arch.tap_width(tap)?;
    let p = parent.params.len();
    let n = inputs.rows();
    let mut m = DMatrix::zeros(n * k, p);
    for i in 0..n {
        let row = Tensor::new(vec![1, inputs.cols()], inputs.row(i).to_vec())?;
        let j = jacobian(parent.arch, parent.params, &row, tap, budget)?;
        for r in 0..k {
            for c in 0..p {
                m[(i * k + r, c)] = j.data()[r * p + c];
            }
        }
    }
    Ok(m)
}

/// Child outputs of an exactly linear fine-tune, `f_p(X) + J·Δθ`.
pub fn synthesize_child_outputs(
    parent: Subject,
    inputs: &Tensor,
    tap: &str,
    delta: &ParamVector,
    budget: usize,
) -> Result<Tensor> {
    let (_, outputs) =
        super::linearized::linearized_outputs(parent, inputs, tap, delta, 1.0, budget)?;
    Ok(outputs)
}

/// Minimum-norm solution of the shared-`Z` normal equations.
pub fn solve_shift_z(
    parent: Subject,
    inputs: &Tensor,
    child_outputs: &Tensor,
    tap: &str,
    budget: usize,
) -> Result<ZSolution> {
    let fp = features(parent.arch, parent.params, inputs, tap)?;
    if fp.shape() != child_outputs.shape() {
        return Err(Error::Shape(format!(
            "child outputs {:?} vs parent outputs {:?}",
            child_outputs.shape(),
            fp.shape()
        )));
    }
    let j = stacked_jacobian(parent, inputs, tap, budget)?;
    let r = DVector::from_iterator(
        fp.numel(),
        child_outputs
            .data()
            .iter()
            .zip(fp.data())
            .map(|(c, p)| c - p),
    );
    let gram = j.transpose() * &j;
    let rhs = j.transpose() * &r;
    let eig = SymmetricEigen::new(gram);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let mut z = DVector::zeros(rhs.len());
    let mut rank = 0;
    if lmax > 0.0 {
        for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > PINV_RTOL * lmax {
                let v = eig.eigenvectors.column(idx);
                z += v * (v.dot(&rhs) / lam);
                rank += 1;
            }
        }
    }
    let fit = &j * &z - &r;
    let residual = fit.norm();
    let z = ParamVector::new(parent.params.layout().clone(), z.iter().copied().collect())?;
    Ok(ZSolution { z, residual, rank })
}
