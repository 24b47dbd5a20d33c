//! Tape-based reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation appends a node holding its forward value, so node ids are
//! a topological order by construction. A backward pass walks the tape once,
//! from the root towards the leaves, and accumulates gradients for every
//! parameter block reachable from the root.
//!
//! Graph-building methods panic on shape mismatches: shapes are validated by
//! the callers (network builders) before any node is recorded.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::tensor::{dot, matmul_at_raw, matmul_bt_raw, matmul_raw, Tensor};

thread_local! {
    static BACKWARD_PASSES: Cell<u64> = const { Cell::new(0) };
}

/// Number of backward passes run on this thread so far.
pub fn backward_passes() -> u64 {
    BACKWARD_PASSES.with(Cell::get)
}

/// Runs `f` and returns its result with the number of backward passes it
/// performed on the current thread.
pub fn count_backward_passes<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = backward_passes();
    let out = f();
    (out, backward_passes() - before)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBt(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sum(Var),
    /// Contraction against a constant; the weights never receive gradient.
    WeightedSum(Var, Tensor),
    MeanCols(Var),
    LogSoftmaxRows(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var),
    Transpose(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        pad: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Option<ParamVector>,
}

const LAYER_NORM_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose `param` nodes read from (and differentiate against) `params`.
    pub fn with_params(params: &ParamVector) -> Self {
        Self {
            nodes: Vec::new(),
            params: Some(params.clone()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records parameter block `index` of the bound parameter vector.
    pub fn param(&mut self, index: usize) -> Var {
        let params = self.params.as_ref().expect("tape has no bound parameters");
        let value = params.block_tensor(index);
        self.push(value, Op::Param(index))
    }

    pub fn param_by_name(&mut self, name: &str) -> Var {
        let index = self
            .params
            .as_ref()
            .and_then(|p| p.layout().index_of(name))
            .unwrap_or_else(|| panic!("no parameter block named `{name}`"));
        self.param(index)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dims");
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push(Tensor::from_raw(vec![n, m], out), Op::MatMul(a, b))
    }

    /// `a · bᵀ`, the layout used by dense layers with `[out, in]` weights.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.dims(a);
        let (m, k2) = self.dims(b);
        assert_eq!(k, k2, "matmul_bt inner dims");
        let out = matmul_bt_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push(Tensor::from_raw(vec![n, m], out), Op::MatMulBt(a, b))
    }

    /// Adds a length-`m` vector to every row of an `n×m` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (n, m) = self.dims(a);
        assert_eq!(self.value(bias).numel(), m, "add_row width");
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(m.max(1)) {
            row.iter_mut().zip(b).for_each(|(o, bv)| *o += bv);
        }
        let shape = vec![n, m];
        self.push(Tensor::from_raw(shape, out), Op::AddRow(a, bias))
    }

    /// Adds `bias[i]` to every entry of row `i`.
    pub fn add_col(&mut self, a: Var, bias: Var) -> Var {
        let (n, m) = self.dims(a);
        assert_eq!(self.value(bias).numel(), n, "add_col height");
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for (row, bv) in out.chunks_mut(m.max(1)).zip(b) {
            row.iter_mut().for_each(|o| *o += bv);
        }
        self.push(Tensor::from_raw(vec![n, m], out), Op::AddCol(a, bias))
    }

    pub fn mul_row(&mut self, a: Var, g: Var) -> Var {
        let (n, m) = self.dims(a);
        assert_eq!(self.value(g).numel(), m, "mul_row width");
        let gv = self.value(g).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(m.max(1)) {
            row.iter_mut().zip(gv).for_each(|(o, s)| *o *= s);
        }
        self.push(Tensor::from_raw(vec![n, m], out), Op::MulRow(a, g))
    }

    pub fn mul_col(&mut self, a: Var, g: Var) -> Var {
        let (n, m) = self.dims(a);
        assert_eq!(self.value(g).numel(), n, "mul_col height");
        let gv = self.value(g).data();
        let mut out = self.value(a).data().to_vec();
        for (row, s) in out.chunks_mut(m.max(1)).zip(gv) {
            row.iter_mut().for_each(|o| *o *= s);
        }
        self.push(Tensor::from_raw(vec![n, m], out), Op::MulCol(a, g))
    }

    fn elementwise(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shapes");
        let out = self
            .value(a)
            .zip_map(self.value(b), f)
            .expect("shapes checked");
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.elementwise(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.elementwise(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.elementwise(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    /// Rectifier with derivative 0 at the kink.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// `Σ a ∘ weights`, with `weights` held constant.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor) -> Var {
        assert_eq!(self.value(a).numel(), weights.numel(), "weighted_sum size");
        let s = self.value(a).dot(&weights);
        self.push(Tensor::scalar(s), Op::WeightedSum(a, weights))
    }

    /// Per-row mean, returned as a `1×n` row.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let (n, m) = self.dims(a);
        let t = self.value(a);
        let out = (0..n)
            .map(|i| t.row(i).iter().sum::<f64>() / m as f64)
            .collect();
        self.push(Tensor::from_raw(vec![1, n], out), Op::MeanCols(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.dims(a);
        let t = self.value(a);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let row = t.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        self.push(Tensor::from_raw(vec![n, m], out), Op::LogSoftmaxRows(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.dims(a);
        let t = self.value(a);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let row = t.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            out.extend(e.iter().map(|v| v / z));
        }
        self.push(Tensor::from_raw(vec![n, m], out), Op::SoftmaxRows(a))
    }

    /// Standardizes each row to zero mean and unit variance (biased variance, eps 1e-5).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.dims(a);
        let t = self.value(a);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let row = t.row(i);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            out.extend(row.iter().map(|v| (v - mean) * inv));
        }
        self.push(Tensor::from_raw(vec![n, m], out), Op::LayerNormRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (n, m) = self.dims(a);
        assert!(start + len <= m, "slice_cols range");
        let t = self.value(a);
        let out = (0..n)
            .flat_map(|i| t.row(i)[start..start + len].to_vec())
            .collect();
        self.push(Tensor::from_raw(vec![n, len], out), Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (n, m) = self.dims(a);
        assert!(start + len <= n, "slice_rows range");
        let out = self.value(a).data()[start * m..(start + len) * m].to_vec();
        self.push(Tensor::from_raw(vec![len, m], out), Op::SliceRows(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.dims(parts[0]).0;
        assert!(
            parts.iter().all(|&p| self.dims(p).0 == n),
            "concat_cols heights"
        );
        let m: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(
            Tensor::from_raw(vec![n, m], out),
            Op::ConcatCols(parts.to_vec()),
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let m = self.dims(parts[0]).1;
        assert!(
            parts.iter().all(|&p| self.dims(p).1 == m),
            "concat_rows widths"
        );
        let n: usize = parts.iter().map(|&p| self.dims(p).0).sum();
        let mut out = Vec::with_capacity(n * m);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        self.push(
            Tensor::from_raw(vec![n, m], out),
            Op::ConcatRows(parts.to_vec()),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let out = self.value(a).clone().reshape(shape).expect("reshape size");
        self.push(out, Op::Reshape(a))
    }

    /// Stride-1 2-D convolution with zero padding.
    ///
    /// `input` is `[C, H, W]`, `weight` is `[O, C, k, k]` and `bias` has `O`
    /// entries; the output is `[O, H + 2·pad − k + 1, W + 2·pad − k + 1]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, pad: usize) -> Var {
        let ish = self.shape(input).to_vec();
        let wsh = self.shape(weight).to_vec();
        assert!(ish.len() == 3 && wsh.len() == 4, "conv2d ranks");
        let (c, h, w) = (ish[0], ish[1], ish[2]);
        let (o, c2, k, k2) = (wsh[0], wsh[1], wsh[2], wsh[3]);
        assert!(c == c2 && k == k2, "conv2d channels / square kernel");
        assert_eq!(self.value(bias).numel(), o, "conv2d bias");
        let (oh, ow) = (h + 2 * pad + 1 - k, w + 2 * pad + 1 - k);
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; o * oh * ow];
        for oc in 0..o {
            let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = b[oc]);
            for ic in 0..c {
                let xin = &x[ic * h * w..(ic + 1) * h * w];
                for dy in 0..k {
                    for dx in 0..k {
                        let wv = wt[((oc * c + ic) * k + dy) * k + dx];
                        let (lo, hi) = conv_span(ow, dx, pad, w);
                        for y in 0..oh {
                            let sy = y + dy;
                            if sy < pad || sy - pad >= h {
                                continue;
                            }
                            let src = &xin
                                [(sy - pad) * w + lo + dx - pad..(sy - pad) * w + hi + dx - pad];
                            plane[y * ow + lo..y * ow + hi]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(o, s)| *o += wv * s);
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::from_raw(vec![o, oh, ow], out),
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            },
        )
    }

    /// Gradient of a scalar root with respect to the bound parameters.
    pub fn grad_scalar(&self, root: Var) -> Result<ParamVector> {
        if self.value(root).numel() != 1 {
            return Err(Error::Contract(format!(
                "gradient root must be a scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        Ok(self.backward(root, Tensor::from_raw(self.shape(root).to_vec(), vec![1.0])))
    }

    /// Vector-Jacobian product: `seed · ∂node/∂θ`, one backward pass.
    pub fn vjp(&self, node: Var, seed: Tensor) -> Result<ParamVector> {
        if seed.numel() != self.value(node).numel() {
            return Err(Error::Shape(format!(
                "seed of {} entries for node of shape {:?}",
                seed.numel(),
                self.shape(node)
            )));
        }
        let seed = seed.reshape(self.shape(node).to_vec())?;
        Ok(self.backward(node, seed))
    }

    fn backward(&self, root: Var, seed: Tensor) -> ParamVector {
        BACKWARD_PASSES.with(|c| c.set(c.get() + 1));
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        let mut out = match &self.params {
            Some(p) => ParamVector::zeros(p.layout().clone()),
            None => ParamVector::zeros(Default::default()),
        };
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads, &mut out);
        }
        out
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>], out: &mut ParamVector) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(b) => {
                out.block_values_mut(*b)
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(o, gv)| *o += gv);
            }
            Op::MatMul(a, b) => {
                let (n, k) = (val(*a).rows(), val(*a).cols());
                let m = val(*b).cols();
                let da = matmul_bt_raw(g.data(), val(*b).data(), n, m, k);
                let db = matmul_at_raw(val(*a).data(), g.data(), n, k, m);
                accumulate(grads, *a, val(*a).shape(), da);
                accumulate(grads, *b, val(*b).shape(), db);
            }
            Op::MatMulBt(a, b) => {
                let (n, k) = (val(*a).rows(), val(*a).cols());
                let m = val(*b).rows();
                let da = matmul_raw(g.data(), val(*b).data(), n, m, k);
                let db = matmul_at_raw(g.data(), val(*a).data(), n, m, k);
                accumulate(grads, *a, val(*a).shape(), da);
                accumulate(grads, *b, val(*b).shape(), db);
            }
            Op::AddRow(a, bias) => {
                let m = val(*bias).numel();
                let mut db = vec![0.0; m];
                for row in g.data().chunks(m.max(1)) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                accumulate(grads, *a, val(*a).shape(), g.data().to_vec());
                accumulate(grads, *bias, val(*bias).shape(), db);
            }
            Op::AddCol(a, bias) => {
                let m = g.cols();
                let db = g.data().chunks(m.max(1)).map(|r| r.iter().sum()).collect();
                accumulate(grads, *a, val(*a).shape(), g.data().to_vec());
                accumulate(grads, *bias, val(*bias).shape(), db);
            }
            Op::MulRow(a, s) => {
                let m = val(*s).numel();
                let sv = val(*s).data();
                let av = val(*a).data();
                let mut da = g.data().to_vec();
                let mut ds = vec![0.0; m];
                for (r, (drow, arow)) in
                    da.chunks_mut(m.max(1)).zip(av.chunks(m.max(1))).enumerate()
                {
                    let grow = &g.data()[r * m..(r + 1) * m];
                    for j in 0..m {
                        drow[j] *= sv[j];
                        ds[j] += grow[j] * arow[j];
                    }
                }
                accumulate(grads, *a, val(*a).shape(), da);
                accumulate(grads, *s, val(*s).shape(), ds);
            }
            Op::MulCol(a, s) => {
                let m = g.cols();
                let sv = val(*s).data();
                let av = val(*a).data();
                let mut da = g.data().to_vec();
                let mut ds = vec![0.0; sv.len()];
                for (r, drow) in da.chunks_mut(m.max(1)).enumerate() {
                    let grow = &g.data()[r * m..(r + 1) * m];
                    let arow = &av[r * m..(r + 1) * m];
                    ds[r] = grow.iter().zip(arow).map(|(x, y)| x * y).sum();
                    drow.iter_mut().for_each(|d| *d *= sv[r]);
                }
                accumulate(grads, *a, val(*a).shape(), da);
                accumulate(grads, *s, val(*s).shape(), ds);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.shape(), g.data().to_vec());
                accumulate(grads, *b, g.shape(), g.data().to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.shape(), g.data().to_vec());
                accumulate(grads, *b, g.shape(), g.data().iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let da = g
                    .data()
                    .iter()
                    .zip(val(*b).data())
                    .map(|(x, y)| x * y)
                    .collect();
                let db = g
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(x, y)| x * y)
                    .collect();
                accumulate(grads, *a, g.shape(), da);
                accumulate(grads, *b, g.shape(), db);
            }
            Op::Scale(a, s) => {
                accumulate(
                    grads,
                    *a,
                    g.shape(),
                    g.data().iter().map(|v| v * s).collect(),
                );
            }
            Op::Relu(a) => {
                let da = g
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect();
                accumulate(grads, *a, g.shape(), da);
            }
            Op::Tanh(a) => {
                let da = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, y)| gv * (1.0 - y * y))
                    .collect();
                accumulate(grads, *a, g.shape(), da);
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                accumulate(grads, *a, val(*a).shape(), vec![s; val(*a).numel()]);
            }
            Op::WeightedSum(a, w) => {
                let s = g.data()[0];
                accumulate(
                    grads,
                    *a,
                    val(*a).shape(),
                    w.data().iter().map(|v| v * s).collect(),
                );
            }
            Op::MeanCols(a) => {
                let (n, m) = (val(*a).rows(), val(*a).cols());
                let mut da = Vec::with_capacity(n * m);
                for i in 0..n {
                    da.extend(std::iter::repeat_n(g.data()[i] / m as f64, m));
                }
                accumulate(grads, *a, val(*a).shape(), da);
            }
            Op::LogSoftmaxRows(a) => {
                let m = g.cols();
                let mut da = Vec::with_capacity(g.numel());
                for (grow, yrow) in g.data().chunks(m).zip(node.value.data().chunks(m)) {
                    let gs: f64 = grow.iter().sum();
                    da.extend(grow.iter().zip(yrow).map(|(gv, y)| gv - y.exp() * gs));
                }
                accumulate(grads, *a, g.shape(), da);
            }
            Op::SoftmaxRows(a) => {
                let m = g.cols();
                let mut da = Vec::with_capacity(g.numel());
                for (grow, yrow) in g.data().chunks(m).zip(node.value.data().chunks(m)) {
                    let dotp: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                    da.extend(grow.iter().zip(yrow).map(|(gv, y)| y * (gv - dotp)));
                }
                accumulate(grads, *a, g.shape(), da);
            }
            Op::LayerNormRows(a) => {
                let m = g.cols();
                let mut da = Vec::with_capacity(g.numel());
                let rows = g
                    .data()
                    .chunks(m)
                    .zip(node.value.data().chunks(m))
                    .zip(val(*a).data().chunks(m));
                for ((grow, yrow), xrow) in rows {
                    let mean = xrow.iter().sum::<f64>() / m as f64;
                    let var = xrow.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let gmean = grow.iter().sum::<f64>() / m as f64;
                    let gy = grow.iter().zip(yrow).map(|(x, y)| x * y).sum::<f64>() / m as f64;
                    da.extend(
                        grow.iter()
                            .zip(yrow)
                            .map(|(gv, y)| inv * (gv - gmean - y * gy)),
                    );
                }
                accumulate(grads, *a, g.shape(), da);
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                accumulate(grads, *a, val(*a).shape(), gt.into_data());
            }
            Op::SliceCols(a, start) => {
                let (n, m) = (val(*a).rows(), val(*a).cols());
                let len = g.cols();
                let mut da = vec![0.0; n * m];
                for r in 0..n {
                    da[r * m + start..r * m + start + len].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, val(*a).shape(), da);
            }
            Op::SliceRows(a, start) => {
                let (n, m) = (val(*a).rows(), val(*a).cols());
                let mut da = vec![0.0; n * m];
                da[start * m..start * m + g.numel()].copy_from_slice(g.data());
                accumulate(grads, *a, val(*a).shape(), da);
            }
            Op::ConcatCols(parts) => {
                let n = g.rows();
                let mut col = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let mut dp = Vec::with_capacity(n * w);
                    for r in 0..n {
                        dp.extend_from_slice(&g.row(r)[col..col + w]);
                    }
                    accumulate(grads, p, val(p).shape(), dp);
                    col += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).numel();
                    accumulate(grads, p, val(p).shape(), g.data()[off..off + len].to_vec());
                    off += len;
                }
            }
            Op::Reshape(a) => {
                accumulate(grads, *a, val(*a).shape(), g.data().to_vec());
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            } => {
                let ish = val(*input).shape();
                let wsh = val(*weight).shape();
                let (c, h, w) = (ish[0], ish[1], ish[2]);
                let (o, k) = (wsh[0], wsh[2]);
                let (oh, ow) = (g.shape()[1], g.shape()[2]);
                let x = val(*input).data();
                let wt = val(*weight).data();
                let gd = g.data();
                // Constant inputs (the data planes) need no gradient.
                let need_dx = !matches!(self.nodes[input.0].op, Op::Leaf);
                let mut dx_ = vec![0.0; if need_dx { x.len() } else { 0 }];
                let mut dw = vec![0.0; wt.len()];
                let mut db = vec![0.0; o];
                for oc in 0..o {
                    let gplane = &gd[oc * oh * ow..(oc + 1) * oh * ow];
                    db[oc] = gplane.iter().sum();
                    for ic in 0..c {
                        let xin = &x[ic * h * w..(ic + 1) * h * w];
                        for dy in 0..k {
                            for dxk in 0..k {
                                let widx = ((oc * c + ic) * k + dy) * k + dxk;
                                let wv = wt[widx];
                                let (lo, hi) = conv_span(ow, dxk, *pad, w);
                                let mut acc = 0.0;
                                for y in 0..oh {
                                    let sy = y + dy;
                                    if sy < *pad || sy - pad >= h {
                                        continue;
                                    }
                                    let start = (sy - pad) * w + lo + dxk - pad;
                                    let grow = &gplane[y * ow + lo..y * ow + hi];
                                    acc += dot(grow, &xin[start..start + grow.len()]);
                                    if need_dx {
                                        let base = ic * h * w + start;
                                        let drow = &mut dx_[base..base + grow.len()];
                                        drow.iter_mut().zip(grow).for_each(|(d, g)| *d += g * wv);
                                    }
                                }
                                dw[widx] += acc;
                            }
                        }
                    }
                }
                if need_dx {
                    accumulate(grads, *input, ish, dx_);
                }
                accumulate(grads, *weight, wsh, dw);
                accumulate(grads, *bias, val(*bias).shape(), db);
            }
        }
    }
}

/// Output columns `xo` for which `xo + dx − pad` lands inside `[0, w)`.
fn conv_span(ow: usize, dx: usize, pad: usize, w: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(dx);
    let hi = (w + pad).saturating_sub(dx).min(ow);
    (lo, hi.max(lo))
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(t) => t
            .data_mut()
            .iter_mut()
            .zip(&data)
            .for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(Tensor::from_raw(shape.to_vec(), data)),
    }
}
