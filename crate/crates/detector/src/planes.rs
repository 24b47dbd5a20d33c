//! Flat parameter or feature vectors laid out as 2-D planes.

use lineage_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{DetectorError, Result};

/// A row-major plane and how much of it is padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub values: Tensor,
    /// `true` for cells past the end of the source vector.
    pub pad_mask: Vec<bool>,
}

impl Plane {
    pub fn padded(&self) -> usize {
        self.pad_mask.iter().filter(|&&p| p).count()
    }

    /// The source vector (padding dropped).
    pub fn flatten(&self) -> Vec<f64> {
        self.values
            .data()
            .iter()
            .zip(&self.pad_mask)
            .filter(|(_, &p)| !p)
            .map(|(v, _)| *v)
            .collect()
    }
}

/// Height and width of a plane holding `count` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneShape {
    pub h: usize,
    pub w: usize,
}

impl PlaneShape {
    /// Most-square exact factorization `h ≤ w`; a prime count instead gets
    /// the smallest near-square shape that holds it, to be zero-padded.
    pub fn for_count(count: usize) -> Self {
        let root = (count as f64).sqrt().floor() as usize;
        let h = (1..=root.max(1))
            .rev()
            .find(|h| count % h == 0)
            .unwrap_or(1);
        if h > 1 || count <= 3 {
            return Self {
                h,
                w: count / h.max(1),
            };
        }
        let h = (count as f64).sqrt().ceil() as usize;
        Self {
            h,
            w: count.div_ceil(h),
        }
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }
}

/// Row-major fill of an `h×w` plane. Extra cells are zero-filled only when
/// `pad` is set; a plane smaller than `values` is always an error.
pub fn reshape_to_planes(values: &[f64], shape: PlaneShape, pad: bool) -> Result<Plane> {
    let cells = shape.cells();
    if cells < values.len() {
        return Err(DetectorError::Contract(format!(
            "{}×{} plane cannot hold {} values (truncation is not supported)",
            shape.h,
            shape.w,
            values.len()
        )));
    }
    if cells > values.len() && !pad {
        return Err(DetectorError::Contract(format!(
            "{}×{} plane has {} cells for {} values and padding is disabled",
            shape.h,
            shape.w,
            cells,
            values.len()
        )));
    }
    let mut data = values.to_vec();
    data.resize(cells, 0.0);
    let pad_mask = (0..cells).map(|i| i >= values.len()).collect();
    Ok(Plane {
        values: Tensor::new(vec![shape.h, shape.w], data)?,
        pad_mask,
    })
}
