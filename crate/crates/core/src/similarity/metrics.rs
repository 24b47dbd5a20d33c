//! Similarity scores between two aligned feature batches.
//!
//! Distance-based kinds are negated mean distances (higher is more similar,
//! 0 for identical batches). CKA and DC are squared alignments in `[0, 1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::kind::MetricKind;

pub(crate) fn check_pair(x: &Tensor, y: &Tensor) -> Result<(usize, usize)> {
    if x.shape() != y.shape() || x.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "feature batches {:?} and {:?} differ",
            x.shape(),
            y.shape()
        )));
    }
    let (n, k) = (x.rows(), x.cols());
    if n == 0 || k == 0 {
        return Err(Error::Degenerate("empty feature batch".into()));
    }
    Ok((n, k))
}

pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `s(X, Y)` for the given metric.
pub fn baseline_similarity(kind: MetricKind, x: &Tensor, y: &Tensor) -> Result<f64> {
    kind.validate()?;
    let (n, k) = check_pair(x, y)?;
    let nk = (n * k) as f64;
    let d = || x.data().iter().zip(y.data()).map(|(a, b)| a - b);
    Ok(match kind {
        MetricKind::L1 => -d().map(f64::abs).sum::<f64>() / nk,
        MetricKind::L2 => -d().map(|v| v * v).sum::<f64>() / nk,
        MetricKind::Lp(p) => -d().map(|v| v.abs().powf(p)).sum::<f64>() / nk,
        MetricKind::Linf => {
            let total: f64 = (0..n)
                .map(|i| {
                    x.row(i)
                        .iter()
                        .zip(y.row(i))
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .sum();
            -total / nk
        }
        MetricKind::Lse(t) => {
            let total: f64 = (0..n)
                .map(|i| {
                    let a: Vec<f64> = x
                        .row(i)
                        .iter()
                        .zip(y.row(i))
                        .map(|(p, q)| t * (p - q).abs())
                        .collect();
                    log_sum_exp(&a)
                })
                .sum();
            -total / (nk * t)
        }
        MetricKind::Cka => CkaStats::new(x, y)?.score(),
        MetricKind::Dc => DcStats::new(x, y)?.score(),
    })
}

/// `log Σ e^{a_k}` with max subtraction.
pub fn log_sum_exp(a: &[f64]) -> f64 {
    let mx = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + a.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Max-subtracted softmax.
pub fn softmax(a: &[f64]) -> Vec<f64> {
    let mx = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Column-centered copy (`H·X`).
pub(crate) fn center_columns(x: &Tensor) -> Tensor {
    let (n, k) = (x.rows(), x.cols());
    let mut means = vec![0.0; k];
    for i in 0..n {
        means.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v);
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let data = (0..n)
        .flat_map(|i| {
            x.row(i)
                .iter()
                .zip(&means)
                .map(|(v, m)| v - m)
                .collect::<Vec<_>>()
        })
        .collect();
    Tensor::from_raw(vec![n, k], data)
}

fn frob_sq(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v * v).sum()
}

fn check_rows(n: usize, kind: &str) -> Result<()> {
    if n < 2 {
        return Err(Error::Contract(format!(
            "{kind} needs at least 2 samples, got {n}"
        )));
    }
    Ok(())
}

/// Centered Gram statistics of linear CKA.
///
/// `cross = ⟨HXXᵀH, HYYᵀH⟩`, `xx = ⟨HXXᵀH, HXXᵀH⟩`, `yy = ⟨HYYᵀH, HYYᵀH⟩`.
pub(crate) struct CkaStats {
    pub xc: Tensor,
    pub yc: Tensor,
    pub cross: f64,
    pub xx: f64,
    pub yy: f64,
}

impl CkaStats {
    pub fn new(x: &Tensor, y: &Tensor) -> Result<Self> {
        let (n, _) = check_pair(x, y)?;
        check_rows(n, "cka")?;
        let xc = center_columns(x);
        let yc = center_columns(y);
        if is_constant(&xc, x) || is_constant(&yc, y) {
            return Err(Error::Degenerate("cka of a constant feature batch".into()));
        }
        // ⟨XcXcᵀ, YcYcᵀ⟩ = ‖Xcᵀ Yc‖²
        let cross = frob_sq(&xc.transpose().matmul(&yc)?);
        let xx = frob_sq(&xc.transpose().matmul(&xc)?);
        let yy = frob_sq(&yc.transpose().matmul(&yc)?);
        if xx == 0.0 || yy == 0.0 {
            return Err(Error::Degenerate(
                "cka with a zero centered Gram matrix".into(),
            ));
        }
        Ok(Self {
            xc,
            yc,
            cross,
            xx,
            yy,
        })
    }

    pub fn score(&self) -> f64 {
        self.cross * self.cross / (self.xx * self.yy)
    }
}

fn is_constant(centered: &Tensor, raw: &Tensor) -> bool {
    let scale = raw
        .data()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    centered.data().iter().all(|v| v.abs() <= 1e-13 * scale)
}

/// Doubly centered distance-matrix statistics of distance correlation.
pub(crate) struct DcStats {
    pub n: usize,
    /// `H D_X H`, row-major `N×N`.
    pub a: Vec<f64>,
    /// `H D_Y H`.
    pub b: Vec<f64>,
    pub cross: f64,
    pub xx: f64,
    pub yy: f64,
}

pub(crate) fn distance_matrix(x: &Tensor) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

pub(crate) fn double_center(d: &[f64], n: usize) -> Vec<f64> {
    let row: Vec<f64> = (0..n)
        .map(|i| d[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    // distance matrices are symmetric, so column means equal row means
    let grand = row.iter().sum::<f64>() / n as f64;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = d[i * n + j] - row[i] - row[j] + grand;
        }
    }
    out
}

impl DcStats {
    pub fn new(x: &Tensor, y: &Tensor) -> Result<Self> {
        let (n, _) = check_pair(x, y)?;
        check_rows(n, "dc")?;
        let a = double_center(&distance_matrix(x), n);
        let b = double_center(&distance_matrix(y), n);
        let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).sum::<f64>();
        let cross = dot(&a, &b);
        let xx = dot(&a, &a);
        let yy = dot(&b, &b);
        if xx == 0.0 || yy == 0.0 {
            return Err(Error::Degenerate("dc of a constant feature batch".into()));
        }
        Ok(Self {
            n,
            a,
            b,
            cross,
            xx,
            yy,
        })
    }

    pub fn score(&self) -> f64 {
        self.cross * self.cross / (self.xx * self.yy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_batches() {
        let x = t(&[vec![1.0, 2.0], vec![-0.5, 3.0], vec![0.0, 0.25]]);
        assert_eq!(baseline_similarity(MetricKind::L1, &x, &x).unwrap(), 0.0);
        assert_eq!(baseline_similarity(MetricKind::L2, &x, &x).unwrap(), 0.0);
        assert!((baseline_similarity(MetricKind::Cka, &x, &x).unwrap() - 1.0).abs() < 1e-14);
        assert!((baseline_similarity(MetricKind::Dc, &x, &x).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hand_evaluated_norms() {
        let x = t(&[vec![1.0, 2.0]]);
        let y = t(&[vec![0.0, 0.0]]);
        assert_eq!(baseline_similarity(MetricKind::L1, &x, &y).unwrap(), -1.5);
        assert_eq!(baseline_similarity(MetricKind::L2, &x, &y).unwrap(), -2.5);
        assert_eq!(baseline_similarity(MetricKind::Linf, &x, &y).unwrap(), -1.0);
        assert_eq!(
            baseline_similarity(MetricKind::Lp(3.0), &x, &y).unwrap(),
            -4.5
        );
    }

    #[test]
    fn single_row_cka_is_a_contract_error() {
        let x = t(&[vec![1.0, 2.0]]);
        assert!(matches!(
            baseline_similarity(MetricKind::Cka, &x, &x),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            baseline_similarity(MetricKind::Dc, &x, &x),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn constant_batch_is_degenerate() {
        let x = t(&[vec![0.1, 2.0], vec![0.1, 2.0], vec![0.1, 2.0]]);
        let y = t(&[vec![1.0, 2.0], vec![0.0, 1.0], vec![3.0, 2.0]]);
        for kind in [MetricKind::Cka, MetricKind::Dc] {
            assert!(matches!(
                baseline_similarity(kind, &x, &y),
                Err(Error::Degenerate(_))
            ));
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let x = t(&[vec![1.0, 2.0]]);
        let y = t(&[vec![1.0, 2.0, 3.0]]);
        assert!(baseline_similarity(MetricKind::L2, &x, &y).is_err());
    }
}
