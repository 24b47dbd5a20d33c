//! Per-sample output weights that fold a metric's first-order expansion into
//! one weighted output sum.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::kind::MetricKind;
use super::metrics::{check_pair, sign, softmax, CkaStats, DcStats};

/// Rows `Π_i` (or `ζ_i` / `ξ_i` for the relative kinds) and the scalar prefactor.
///
/// The effective weights are `prefactor · rows`. For CKA and DC the prefactor
/// is the baseline score `s(X, Y)`; for the norm kinds it is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PiWeights {
    pub kind: MetricKind,
    pub rows: Tensor,
    pub prefactor: f64,
}

impl PiWeights {
    pub fn effective(&self) -> Tensor {
        self.rows.scale(self.prefactor)
    }
}

/// Weights for `s(X, Y)` where `X` holds the parent's features and `Y` the child's.
pub fn pi_weights(kind: MetricKind, x: &Tensor, y: &Tensor) -> Result<PiWeights> {
    kind.validate()?;
    let (n, k) = check_pair(x, y)?;
    let nk = (n * k) as f64;
    let diffs = || x.data().iter().zip(y.data()).map(|(a, b)| a - b);
    let flat = |data: Vec<f64>| Tensor::from_raw(vec![n, k], data);
    let (rows, prefactor) = match kind {
        MetricKind::L1 => (flat(diffs().map(|d| -sign(d) / nk).collect()), 1.0),
        MetricKind::L2 => (flat(diffs().map(|d| -2.0 * d / nk).collect()), 1.0),
        MetricKind::Lp(p) => (
            flat(
                diffs()
                    .map(|d| -p / nk * sign(d) * d.abs().powf(p - 1.0))
                    .collect(),
            ),
            1.0,
        ),
        MetricKind::Lse(t) => {
            let mut data = Vec::with_capacity(n * k);
            for i in 0..n {
                let d: Vec<f64> = x.row(i).iter().zip(y.row(i)).map(|(a, b)| a - b).collect();
                let scaled: Vec<f64> = d.iter().map(|v| t * v.abs()).collect();
                let sm = softmax(&scaled);
                data.extend(d.iter().zip(&sm).map(|(dv, s)| -sign(*dv) * s / nk));
            }
            (flat(data), 1.0)
        }
        MetricKind::Cka => cka_zeta(x, y)?,
        MetricKind::Dc => dc_xi(x, y)?,
        MetricKind::Linf => {
            return Err(Error::Contract("linf has no first-order expansion".into()));
        }
    };
    Ok(PiWeights {
        kind,
        rows,
        prefactor,
    })
}

/// `ζ_i = 4·(HYYᵀHX)_i / ⟨K_X, K_Y⟩ − 4·(HXXᵀHX)_i / ⟨K_X, K_X⟩`.
fn cka_zeta(x: &Tensor, y: &Tensor) -> Result<(Tensor, f64)> {
    let st = CkaStats::new(x, y)?;
    // Yc (Ycᵀ Xc) and Xc (Xcᵀ Xc), both N×K
    let yx = st.yc.matmul(&st.yc.transpose().matmul(&st.xc)?)?;
    let xx = st.xc.matmul(&st.xc.transpose().matmul(&st.xc)?)?;
    // When the batches are orthogonal the score is 0 and so is s·ζ; the
    // first term's 1/cross singularity cancels against the prefactor.
    let c1 = if st.cross == 0.0 { 0.0 } else { 4.0 / st.cross };
    let c2 = 4.0 / st.xx;
    let rows = yx.zip_map(&xx, |a, b| c1 * a - c2 * b)?;
    Ok((rows, st.score()))
}

/// `ξ_i = 4·Σ_j (HD_YH)_ij D_ij: / ⟨·,·⟩_XY − 4·Σ_j (HD_XH)_ij D_ij: / ⟨·,·⟩_XX`,
/// with the unit direction `D_ij:` set to zero for coincident rows.
fn dc_xi(x: &Tensor, y: &Tensor) -> Result<(Tensor, f64)> {
    let st = DcStats::new(x, y)?;
    let (n, k) = (x.rows(), x.cols());
    let c1 = if st.cross == 0.0 { 0.0 } else { 4.0 / st.cross };
    let c2 = 4.0 / st.xx;
    let mut rows = vec![0.0; n * k];
    let mut dir = vec![0.0; k];
    for i in 0..n {
        let out = &mut rows[i * k..(i + 1) * k];
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut norm = 0.0;
            for ((d, a), b) in dir.iter_mut().zip(x.row(i)).zip(x.row(j)) {
                *d = a - b;
                norm += *d * *d;
            }
            let norm = norm.sqrt();
            if norm == 0.0 {
                continue;
            }
            let w = (c1 * st.b[i * st.n + j] - c2 * st.a[i * st.n + j]) / norm;
            out.iter_mut().zip(&dir).for_each(|(o, d)| *o += w * d);
        }
    }
    Ok((Tensor::from_raw(vec![n, k], rows), st.score()))
}
