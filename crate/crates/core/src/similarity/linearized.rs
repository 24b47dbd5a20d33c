//! Scores of a linearized parent against a child.
//!
//! The linearized parent is `f̄_p(x) = f_p(x) + α·J_p(x)·(θ_c − θ_p)`. The
//! approximated path folds the metric's first-order expansion into a single
//! weighted-output gradient; the oracle path materializes `f̄_p` row by row
//! from explicit Jacobians and evaluates the metric exactly.

use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::network::{features, forward_to, jacobian};
use crate::params::ParamVector;
use crate::tensor::Tensor;

use super::kind::MetricKind;
use super::metrics::baseline_similarity;
use super::pi::pi_weights;

/// A model as seen by the similarity code.
#[derive(Debug, Clone, Copy)]
pub struct Subject<'a> {
    pub id: &'a str,
    pub arch: &'a ArchSpec,
    pub params: &'a ParamVector,
}

impl<'a> Subject<'a> {
    pub fn new(id: &'a str, arch: &'a ArchSpec, params: &'a ParamVector) -> Self {
        Self { id, arch, params }
    }
}

/// `θ_c − θ_p` on the blocks at and below `tap`, zero elsewhere, in the
/// parent's layout.
pub fn aligned_delta(parent: Subject, child: Subject, tap: &str) -> Result<ParamVector> {
    let names = parent.arch.blocks_below(tap)?;
    if child.arch.blocks_below(tap)? != names
        || parent.arch.tap_width(tap)? != child.arch.tap_width(tap)?
    {
        return Err(Error::Layout(format!(
            "`{}` and `{}` are not aligned at tap `{tap}`",
            parent.id, child.id
        )));
    }
    let pl = parent.params.layout();
    let cl = child.params.layout();
    let mut delta = ParamVector::zeros(pl.clone());
    for name in &names {
        let (pb, cb) = match (pl.block(name), cl.block(name)) {
            (Some(p), Some(c)) if p.shape == c.shape => (p.clone(), c.clone()),
            _ => {
                return Err(Error::Layout(format!(
                    "block `{name}` differs between `{}` and `{}`",
                    parent.id, child.id
                )))
            }
        };
        let pv = &parent.params.values()[pb.range()];
        let cv = &child.params.values()[cb.range()];
        let i = pl.index_of(name).expect("block exists");
        delta
            .block_values_mut(i)
            .iter_mut()
            .zip(cv.iter().zip(pv))
            .for_each(|(d, (c, p))| *d = c - p);
    }
    Ok(delta)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Contract(format!(
            "alpha must be finite and >= 0, got {alpha}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxScore {
    /// `s(f_p, f_c)`
    pub baseline: f64,
    /// First-order `s(f̄_p, f_c)`
    pub score: f64,
}

impl ApproxScore {
    pub fn gain(&self) -> f64 {
        self.score - self.baseline
    }
}

/// The first-order score as an affine function of α: `baseline + α·slope`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxTerms {
    pub baseline: f64,
    /// `prefactor · ∇θ[Σ_i sg(Π_i) f_p(x_i)] · Δθ`
    pub slope: f64,
}

impl ApproxTerms {
    pub fn at(&self, alpha: f64) -> ApproxScore {
        ApproxScore {
            baseline: self.baseline,
            score: self.baseline + alpha * self.slope,
        }
    }
}

/// Baseline and first-order slope from one forward and exactly one backward
/// pass of the parent, through `Σ_i sg(Π_i)·f_p(x_i)`.
pub fn approx_terms(
    kind: MetricKind,
    parent: Subject,
    child: Subject,
    inputs: &Tensor,
    tap: &str,
) -> Result<ApproxTerms> {
    let delta = aligned_delta(parent, child, tap)?;
    let mut fwd = forward_to(parent.arch, parent.params, inputs, tap)?;
    let x = fwd.output().clone();
    let y = features(child.arch, child.params, inputs, tap)?;
    let baseline = baseline_similarity(kind, &x, &y)?;
    let pi = pi_weights(kind, &x, &y)?;
    // Π is a detached constant: the tape only sees it as contraction weights.
    let root = fwd.tape.weighted_sum(fwd.output, pi.rows.clone());
    let grad = fwd.tape.grad_scalar(root)?;
    Ok(ApproxTerms {
        baseline,
        slope: pi.prefactor * grad.dot(&delta)?,
    })
}

/// One-pass first-order score of the linearized parent at `alpha`.
pub fn approx_similarity(
    kind: MetricKind,
    parent: Subject,
    child: Subject,
    inputs: &Tensor,
    tap: &str,
    alpha: f64,
) -> Result<ApproxScore> {
    check_alpha(alpha)?;
    Ok(approx_terms(kind, parent, child, inputs, tap)?.at(alpha))
}

/// Materialized linearized outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedEval {
    pub alpha: f64,
    pub parent_id: String,
    pub child_id: String,
    /// `α·J_i·Δθ` per sample.
    pub g: Tensor,
    /// `f_p(X) + G`.
    pub outputs: Tensor,
}

/// `f_p(X) + α·[J_i·Δθ]_i` from explicit per-sample Jacobians (`N·K` backward passes).
pub fn linearized_outputs(
    parent: Subject,
    inputs: &Tensor,
    tap: &str,
    delta: &ParamVector,
    alpha: f64,
    budget: usize,
) -> Result<(Tensor, Tensor)> {
    let x = features(parent.arch, parent.params, inputs, tap)?;
    let (n, k) = (x.rows(), x.cols());
    let mut g = Vec::with_capacity(n * k);
    for i in 0..n {
        let row = Tensor::from_raw(vec![1, inputs.cols()], inputs.row(i).to_vec());
        let jac = jacobian(parent.arch, parent.params, &row, tap, budget).map_err(|e| match e {
            Error::OverBudget { needed, budget } => Error::OracleUnavailable(format!(
                "explicit jacobian needs {needed} entries, budget is {budget}"
            )),
            other => other,
        })?;
        let p = delta.len();
        for r in 0..k {
            let jr = &jac.data()[r * p..(r + 1) * p];
            g.push(
                alpha
                    * jr.iter()
                        .zip(delta.values())
                        .map(|(a, b)| a * b)
                        .sum::<f64>(),
            );
        }
    }
    let g = Tensor::from_raw(vec![n, k], g);
    let outputs = x.add(&g)?;
    Ok((g, outputs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleScore {
    pub score: f64,
    pub eval: LinearizedEval,
}

/// Step-by-step score `s(f̄_p, f_c)` evaluated exactly on materialized outputs.
pub fn oracle_similarity(
    kind: MetricKind,
    parent: Subject,
    child: Subject,
    inputs: &Tensor,
    tap: &str,
    alpha: f64,
    budget: usize,
) -> Result<OracleScore> {
    check_alpha(alpha)?;
    let delta = aligned_delta(parent, child, tap)?;
    let y = features(child.arch, child.params, inputs, tap)?;
    let (g, outputs) = linearized_outputs(parent, inputs, tap, &delta, alpha, budget)?;
    let score = baseline_similarity(kind, &outputs, &y)?;
    Ok(OracleScore {
        score,
        eval: LinearizedEval {
            alpha,
            parent_id: parent.id.to_string(),
            child_id: child.id.to_string(),
            g,
            outputs,
        },
    })
}
