//! Forward passes, parameter gradients and Jacobians of subject MLPs.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::arch::{Activation, ArchSpec, TapPoint};
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Default cap on `K·|θ|` for explicit Jacobians.
pub const DEFAULT_JACOBIAN_BUDGET: usize = 50_000_000;

/// A recorded forward pass.
#[derive(Debug)]
pub struct Forward {
    pub tape: Tape,
    pub output: Var,
    pub taps: BTreeMap<String, Var>,
}

impl Forward {
    pub fn output(&self) -> &Tensor {
        self.tape.value(self.output)
    }

    pub fn feature(&self, tap: &str) -> Option<&Tensor> {
        self.taps.get(tap).map(|&v| self.tape.value(v))
    }
}

/// Uniform fan-in initialization, `U(−1/√fan_in, 1/√fan_in)` for weights and biases.
pub fn init_params<R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> ParamVector {
    let layout = arch.layout();
    let mut p = ParamVector::zeros(layout.clone());
    for (i, b) in layout.blocks().iter().enumerate() {
        let fan_in = arch.sizes[i / 2];
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for v in p.block_values_mut(i) {
            *v = dist.sample(rng);
        }
        debug_assert_eq!(b.len(), p.block_values(i).len());
    }
    p
}

fn check_inputs(arch: &ArchSpec, params: &ParamVector, inputs: &Tensor) -> Result<()> {
    arch.validate()?;
    if **params.layout() != *arch.layout() {
        return Err(Error::Layout(format!(
            "parameters do not match architecture {:?}",
            arch.sizes
        )));
    }
    if inputs.shape().len() != 2 || inputs.cols() != arch.input_dim() {
        return Err(Error::Shape(format!(
            "inputs of shape {:?} for input dimension {}",
            inputs.shape(),
            arch.input_dim()
        )));
    }
    if let Some(index) = inputs.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput { index });
    }
    Ok(())
}

fn record(
    arch: &ArchSpec,
    params: &ParamVector,
    inputs: &Tensor,
    stop_at: Option<TapPoint>,
    taps: &[&str],
) -> Result<Forward> {
    check_inputs(arch, params, inputs)?;
    let wanted: Vec<(TapPoint, &str)> = taps
        .iter()
        .map(|t| arch.resolve_tap(t).map(|p| (p, *t)))
        .collect::<Result<_>>()?;
    let mut tape = Tape::with_params(params);
    let mut h = tape.constant(inputs.clone());
    let mut out_taps = BTreeMap::new();
    let l = arch.n_layers();
    for i in 1..=l {
        let w = tape.param(2 * (i - 1));
        let b = tape.param(2 * (i - 1) + 1);
        let z = tape.matmul_bt(h, w);
        h = tape.add_row(z, b);
        check_finite(&tape, h, &format!("fc{i}"))?;
        for (p, name) in &wanted {
            if *p == TapPoint::Linear(i) {
                out_taps.insert(name.to_string(), h);
            }
        }
        if stop_at == Some(TapPoint::Linear(i)) {
            break;
        }
        if i < l {
            h = match arch.activation {
                Activation::Relu => tape.relu(h),
                Activation::Tanh => tape.tanh(h),
            };
            for (p, name) in &wanted {
                if *p == TapPoint::Activation(i) {
                    out_taps.insert(name.to_string(), h);
                }
            }
            if stop_at == Some(TapPoint::Activation(i)) {
                break;
            }
        }
    }
    Ok(Forward {
        tape,
        output: h,
        taps: out_taps,
    })
}

fn check_finite(tape: &Tape, v: Var, layer: &str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer: layer.to_string(),
        })
    }
}

/// Full forward pass over `inputs` (`N×d_in`), recording the requested taps.
pub fn forward(
    arch: &ArchSpec,
    params: &ParamVector,
    inputs: &Tensor,
    taps: &[&str],
) -> Result<Forward> {
    record(arch, params, inputs, None, taps)
}

/// Forward pass that stops at `tap`; `output` is the tapped feature.
pub fn forward_to(
    arch: &ArchSpec,
    params: &ParamVector,
    inputs: &Tensor,
    tap: &str,
) -> Result<Forward> {
    let point = arch.resolve_tap(tap)?;
    record(arch, params, inputs, Some(point), &[tap])
}

/// Tapped features only, `N×width(tap)`.
pub fn features(
    arch: &ArchSpec,
    params: &ParamVector,
    inputs: &Tensor,
    tap: &str,
) -> Result<Tensor> {
    let f = forward_to(arch, params, inputs, tap)?;
    Ok(f.output().clone())
}

/// `∂root/∂θ` for a scalar node of a recorded forward pass.
pub fn grad_scalar(tape: &Tape, root: Var) -> Result<ParamVector> {
    tape.grad_scalar(root)
}

/// Explicit Jacobian `∂f_tap(x)/∂θ` of a single input row, `K×|θ|`.
///
/// Runs one backward pass per output coordinate; used as the reference
/// path for the one-pass contraction.
pub fn jacobian(
    arch: &ArchSpec,
    params: &ParamVector,
    x: &Tensor,
    tap: &str,
    budget: usize,
) -> Result<Tensor> {
    if x.rows() != 1 {
        return Err(Error::Contract(format!(
            "jacobian takes a single input row, got {}",
            x.rows()
        )));
    }
    let k = arch.tap_width(tap)?;
    let needed = k * params.len();
    if needed > budget {
        return Err(Error::OverBudget { needed, budget });
    }
    let f = forward_to(arch, params, x, tap)?;
    let mut out = Vec::with_capacity(needed);
    for j in 0..k {
        let mut seed = vec![0.0; k];
        seed[j] = 1.0;
        let row = f.tape.vjp(f.output, Tensor::from_raw(vec![1, k], seed))?;
        out.extend_from_slice(row.values());
    }
    Ok(Tensor::from_raw(vec![k, params.len()], out))
}

/// `∇_θ Σ_i Π_i · f_tap(x_i)` with `Π` held constant, in one backward pass.
pub fn weighted_output_grad(
    arch: &ArchSpec,
    params: &ParamVector,
    inputs: &Tensor,
    weights: &Tensor,
    tap: &str,
) -> Result<ParamVector> {
    let k = arch.tap_width(tap)?;
    if weights.rows() != inputs.rows() || weights.cols() != k {
        return Err(Error::Contract(format!(
            "weights of shape {:?} for {} samples at tap `{tap}` of width {k}",
            weights.shape(),
            inputs.rows()
        )));
    }
    let mut f = forward_to(arch, params, inputs, tap)?;
    let root = f.tape.weighted_sum(f.output, weights.clone());
    f.tape.grad_scalar(root)
}
