//! MNIST-style IDX ingestion.
//!
//! Images: magic `0x00000803`, then count, rows, cols (big-endian `u32`) and
//! `count·rows·cols` unsigned bytes. Labels: magic `0x00000801`, count, bytes.

use std::path::Path;

use lineage_core::Tensor;

use crate::error::{Result, ZooError};
use crate::task::Dataset;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, reason: impl Into<String>) -> ZooError {
        ZooError::Format {
            path: self.path.to_path_buf(),
            offset,
            reason: reason.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        if self.bytes.len() < end {
            return Err(self.fail(self.pos, format!("truncated while reading {what}")));
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..end].try_into().expect("4 bytes"));
        self.pos = end;
        Ok(v)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let at = self.pos;
        let m = self.u32("magic number")?;
        if m != expected {
            return Err(self.fail(at, format!("magic {m:#010x}, expected {expected:#010x}")));
        }
        Ok(())
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .ok_or_else(|| self.fail(self.pos, "size overflow"))?;
        if self.bytes.len() < end {
            return Err(self.fail(
                self.bytes.len(),
                format!(
                    "truncated payload: need {len} bytes from offset {}",
                    self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| ZooError::io(path, e))
}

/// Parses an image file into `count × (rows·cols)` pixels scaled to `[0, 1]`.
pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut r = Reader {
        path,
        bytes,
        pos: 0,
    };
    r.magic(IMAGE_MAGIC)?;
    let count = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let dim = rows * cols;
    let data = r.payload(count * dim)?;
    Ok((
        count,
        dim,
        data.iter().map(|&b| f64::from(b) / 255.0).collect(),
    ))
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = Reader {
        path,
        bytes,
        pos: 0,
    };
    r.magic(LABEL_MAGIC)?;
    let count = r.u32("label count")? as usize;
    Ok(r.payload(count)?.iter().map(|&b| usize::from(b)).collect())
}

/// Loads an image/label pair of IDX files as a flattened dataset.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (count, dim, pixels) = parse_images(images, &read(images)?)?;
    let y = parse_labels(labels, &read(labels)?)?;
    if y.len() != count {
        return Err(ZooError::CountMismatch {
            images: count,
            labels: y.len(),
        });
    }
    let classes = y.iter().max().map_or(0, |m| m + 1);
    Ok(Dataset {
        x: Tensor::matrix(count, dim, pixels)?,
        y,
        classes,
    })
}
