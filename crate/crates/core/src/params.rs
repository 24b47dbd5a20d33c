//! Flat parameter vectors with a named block layout.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered, contiguous block layout.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    blocks: Vec<Block>,
}

impl Layout {
    pub fn from_shapes<S: Into<String>>(shapes: impl IntoIterator<Item = (S, Vec<usize>)>) -> Self {
        let mut offset = 0;
        let blocks = shapes
            .into_iter()
            .map(|(name, shape)| {
                let b = Block {
                    name: name.into(),
                    shape,
                    offset,
                };
                offset += b.len();
                b
            })
            .collect();
        Self { blocks }
    }

    /// Checks that offsets are contiguous and cover `total` exactly.
    pub fn validate(&self, total: usize) -> Result<()> {
        let mut expected = 0;
        for b in &self.blocks {
            if b.offset != expected {
                return Err(Error::Layout(format!(
                    "block `{}` starts at {} but {} was expected",
                    b.name, b.offset, expected
                )));
            }
            expected += b.len();
        }
        if expected != total {
            return Err(Error::Layout(format!(
                "layout covers {expected} values, vector has {total}"
            )));
        }
        Ok(())
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn total(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        layout.validate(values.len())?;
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.total();
        Self {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block_values(&self, index: usize) -> &[f64] {
        &self.values[self.layout.blocks[index].range()]
    }

    pub fn block_values_mut(&mut self, index: usize) -> &mut [f64] {
        let r = self.layout.blocks[index].range();
        &mut self.values[r]
    }

    pub fn block_tensor(&self, index: usize) -> Tensor {
        let b = &self.layout.blocks[index];
        Tensor::from_raw(b.shape.clone(), self.values[b.range()].to_vec())
    }

    pub fn block_by_name(&self, name: &str) -> Option<&[f64]> {
        self.layout.index_of(name).map(|i| self.block_values(i))
    }

    fn check_aligned(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Layout("parameter vectors are not aligned".into()));
        }
        Ok(())
    }

    /// `self - other`, element-wise.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_aligned(other)?;
        Ok(Self {
            layout: self.layout.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &ParamVector) -> Result<ParamVector> {
        self.check_aligned(other)?;
        Ok(Self {
            layout: self.layout.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + s * b)
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> ParamVector {
        Self {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_aligned(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
