//! Central finite differences, the reference for every analytic gradient.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::{Layout, ParamVector};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Step used by the gradient checks.
pub const FD_STEP: f64 = 1e-6;

/// Gradients below this magnitude are compared absolutely; above it, relatively.
pub const FD_ABS_FLOOR: f64 = 1e-4;

/// `(f(θ + h·e_j) − f(θ − h·e_j)) / 2h` for every coordinate `j`.
pub fn central_difference(
    params: &ParamVector,
    step: f64,
    mut f: impl FnMut(&ParamVector) -> f64,
) -> ParamVector {
    let mut probe = params.clone();
    let mut out = ParamVector::zeros(params.layout().clone());
    for j in 0..params.len() {
        let orig = probe.values()[j];
        probe.values_mut()[j] = orig + step;
        let up = f(&probe);
        probe.values_mut()[j] = orig - step;
        let down = f(&probe);
        probe.values_mut()[j] = orig;
        out.values_mut()[j] = (up - down) / (2.0 * step);
    }
    out
}

/// Worst per-coordinate discrepancy: relative where either side exceeds
/// [`FD_ABS_FLOOR`] in magnitude, absolute (scaled by the floor) otherwise.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FD_ABS_FLOOR))
        .fold(0.0, f64::max)
}

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖, FD_ABS_FLOOR)`.
///
/// Per-coordinate ratios are dominated by the round-off floor of the
/// difference quotient (`~ε·|f|/h`) on coordinates whose true gradient is
/// tiny; the vector norm measures the discrepancy on the gradient's own scale.
pub fn vector_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let sq = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = sq(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = sq(&mut analytic.iter().copied()).max(sq(&mut numeric.iter().copied()));
    diff / scale.max(FD_ABS_FLOOR)
}

/// A scalar-valued graph over a parameter vector, checked against finite differences.
pub struct OpCase {
    pub name: &'static str,
    pub params: ParamVector,
    build: Box<dyn Fn(&mut Tape) -> Var + Send + Sync>,
}

impl OpCase {
    pub fn new(
        name: &'static str,
        params: ParamVector,
        build: impl Fn(&mut Tape) -> Var + Send + Sync + 'static,
    ) -> Self {
        Self {
            name,
            params,
            build: Box::new(build),
        }
    }

    pub fn eval(&self, params: &ParamVector) -> f64 {
        let mut t = Tape::with_params(params);
        let root = (self.build)(&mut t);
        t.value(root).data()[0]
    }

    pub fn analytic(&self) -> ParamVector {
        let mut t = Tape::with_params(&self.params);
        let root = (self.build)(&mut t);
        t.grad_scalar(root).expect("scalar root")
    }

    /// Norm-wise relative error of the tape gradient against central differences.
    pub fn relative_error(&self) -> f64 {
        let numeric = central_difference(&self.params, FD_STEP, |p| self.eval(p));
        vector_relative_error(self.analytic().values(), numeric.values())
    }
}

fn random_params(
    rng: &mut ChaCha8Rng,
    shapes: &[(&str, Vec<usize>)],
    keep_off_zero: bool,
) -> ParamVector {
    let layout = Arc::new(Layout::from_shapes(
        shapes.iter().map(|(n, s)| (n.to_string(), s.clone())),
    ));
    let mut p = ParamVector::zeros(layout);
    for v in p.values_mut() {
        let mut x: f64 = rng.random_range(-1.5..1.5);
        if keep_off_zero && x.abs() < 0.05 {
            x += 0.1f64.copysign(x);
        }
        *v = x;
    }
    p
}

fn reduce(t: &mut Tape, v: Var, rng: &mut ChaCha8Rng) -> Var {
    let n = t.value(v).numel();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    t.weighted_sum(v, Tensor::from_raw(vec![n], w))
}

/// One randomized case per differentiable tape operation.
pub fn tape_op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dim = |lo: usize, hi: usize| -> usize { rng.random_range(lo..=hi) };
    let (n, k, m) = (dim(1, 4), dim(1, 5), dim(1, 4));
    let (c, h, w, o) = (dim(1, 3), dim(2, 5), dim(2, 5), dim(1, 3));
    let ksz = if dim(0, 1) == 0 { 1 } else { 3 };
    let pad = ksz / 2;
    let mut cases = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    macro_rules! case {
        ($name:expr, $shapes:expr, $off:expr, |$t:ident, $r:ident| $body:expr) => {{
            let params = random_params(&mut rng, &$shapes, $off);
            let red_seed: u64 = rng.random();
            cases.push(OpCase::new($name, params, move |$t: &mut Tape| {
                let mut $r = ChaCha8Rng::seed_from_u64(red_seed);
                let out = $body;
                reduce($t, out, &mut $r)
            }));
        }};
    }
    case!(
        "matmul",
        [("a", vec![n, k]), ("b", vec![k, m])],
        false,
        |t, _r| {
            let (a, b) = (t.param(0), t.param(1));
            t.matmul(a, b)
        }
    );
    case!(
        "matmul_bt",
        [("a", vec![n, k]), ("b", vec![m, k])],
        false,
        |t, _r| {
            let (a, b) = (t.param(0), t.param(1));
            t.matmul_bt(a, b)
        }
    );
    case!(
        "add_row",
        [("a", vec![n, k]), ("b", vec![k])],
        false,
        |t, _r| {
            let (a, b) = (t.param(0), t.param(1));
            t.add_row(a, b)
        }
    );
    case!(
        "add_col",
        [("a", vec![n, k]), ("b", vec![n])],
        false,
        |t, _r| {
            let (a, b) = (t.param(0), t.param(1));
            t.add_col(a, b)
        }
    );
    case!(
        "mul_row",
        [("a", vec![n, k]), ("b", vec![k])],
        false,
        |t, _r| {
            let (a, b) = (t.param(0), t.param(1));
            t.mul_row(a, b)
        }
    );
    case!(
        "mul_col",
        [("a", vec![n, k]), ("b", vec![n])],
        false,
        |t, _r| {
            let (a, b) = (t.param(0), t.param(1));
            t.mul_col(a, b)
        }
    );
    case!(
        "add",
        [("a", vec![n, k]), ("b", vec![n, k])],
        false,
        |t, _r| {
            let (a, b) = (t.param(0), t.param(1));
            t.add(a, b)
        }
    );
    case!(
        "sub",
        [("a", vec![n, k]), ("b", vec![n, k])],
        false,
        |t, _r| {
            let (a, b) = (t.param(0), t.param(1));
            t.sub(a, b)
        }
    );
    case!(
        "mul",
        [("a", vec![n, k]), ("b", vec![n, k])],
        false,
        |t, _r| {
            let (a, b) = (t.param(0), t.param(1));
            t.mul(a, b)
        }
    );
    case!("scale", [("a", vec![n, k])], false, |t, _r| {
        let a = t.param(0);
        t.scale(a, -1.7)
    });
    case!("relu", [("a", vec![n, k])], true, |t, _r| {
        let a = t.param(0);
        t.relu(a)
    });
    case!("tanh", [("a", vec![n, k])], false, |t, _r| {
        let a = t.param(0);
        t.tanh(a)
    });
    case!("sum", [("a", vec![n, k])], false, |t, _r| {
        let a = t.param(0);
        let s = t.sum(a);
        t.mul(s, s)
    });
    case!("mean_cols", [("a", vec![n, k])], false, |t, _r| {
        let a = t.param(0);
        t.mean_cols(a)
    });
    case!("log_softmax_rows", [("a", vec![n, k])], false, |t, _r| {
        let a = t.param(0);
        t.log_softmax_rows(a)
    });
    case!("softmax_rows", [("a", vec![n, k])], false, |t, _r| {
        let a = t.param(0);
        t.softmax_rows(a)
    });
    case!(
        "layer_norm_rows",
        [("a", vec![n, k + 2])],
        false,
        |t, _r| {
            let a = t.param(0);
            t.layer_norm_rows(a)
        }
    );
    case!(
        "transpose",
        [("a", vec![n, k]), ("b", vec![n, m])],
        false,
        |t, _r| {
            let (a, b) = (t.param(0), t.param(1));
            let at = t.transpose(a);
            t.matmul(at, b)
        }
    );
    case!("slice_cols", [("a", vec![n, k + 1])], false, |t, _r| {
        let a = t.param(0);
        t.slice_cols(a, 1, k)
    });
    case!("slice_rows", [("a", vec![n + 1, k])], false, |t, _r| {
        let a = t.param(0);
        t.slice_rows(a, 1, n)
    });
    case!(
        "concat_cols",
        [("a", vec![n, k]), ("b", vec![n, m])],
        false,
        |t, _r| {
            let (a, b) = (t.param(0), t.param(1));
            let cat = t.concat_cols(&[a, b, a]);
            t.tanh(cat)
        }
    );
    case!(
        "concat_rows",
        [("a", vec![n, k]), ("b", vec![m, k])],
        false,
        |t, _r| {
            let (a, b) = (t.param(0), t.param(1));
            let cat = t.concat_rows(&[b, a]);
            t.tanh(cat)
        }
    );
    case!("reshape", [("a", vec![n, k])], false, |t, _r| {
        let a = t.param(0);
        let r = t.reshape(a, vec![1, n * k]);
        t.softmax_rows(r)
    });
    case!(
        "conv2d",
        [
            ("x", vec![c, h, w]),
            ("w", vec![o, c, ksz, ksz]),
            ("b", vec![o])
        ],
        false,
        |t, _r| {
            let (x, wt, b) = (t.param(0), t.param(1), t.param(2));
            t.conv2d(x, wt, b, pad)
        }
    );
    case!("weighted_sum", [("a", vec![n, k])], false, |t, _r| {
        let a = t.param(0);
        t.tanh(a)
    });
    cases
}
