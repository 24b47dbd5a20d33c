//! Subject-model architecture descriptions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

/// A fully connected network: linear layers separated by an activation,
/// no normalization. `sizes = [d_in, h_1, …, K]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

/// A named layer boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapPoint {
    /// Pre-activation output of linear layer `i` (1-based).
    Linear(usize),
    /// Post-activation output of linear layer `i`.
    Activation(usize),
}

impl ArchSpec {
    /// Desk-scale default: `d_in-64-32-K` with rectifiers.
    pub fn desk_mlp(d_in: usize, classes: usize) -> Self {
        Self {
            sizes: vec![d_in, 64, 32, classes],
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::Contract(format!(
                "invalid layer sizes {:?}",
                self.sizes
            )));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layout(&self) -> Arc<Layout> {
        let mut shapes = Vec::new();
        for (i, w) in self.sizes.windows(2).enumerate() {
            shapes.push((format!("fc{}.weight", i + 1), vec![w[1], w[0]]));
            shapes.push((format!("fc{}.bias", i + 1), vec![w[1]]));
        }
        Arc::new(Layout::from_shapes(shapes))
    }

    /// All tap names in forward order: `fc1, act1, fc2, act2, …, output`.
    pub fn tap_names(&self) -> Vec<String> {
        let l = self.n_layers();
        let mut names = Vec::new();
        for i in 1..l {
            names.push(format!("fc{i}"));
            names.push(format!("act{i}"));
        }
        names.push("output".into());
        names
    }

    /// The boundary after the first activation, or the output for a
    /// single-layer network.
    pub fn default_tap(&self) -> String {
        if self.n_layers() > 1 {
            "act1".into()
        } else {
            "output".into()
        }
    }

    pub fn resolve_tap(&self, name: &str) -> Result<TapPoint> {
        let l = self.n_layers();
        let parse = |prefix: &str| {
            name.strip_prefix(prefix)
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|i| (1..=l).contains(i))
        };
        if name == "output" {
            return Ok(TapPoint::Linear(l));
        }
        if let Some(i) = parse("fc") {
            return Ok(TapPoint::Linear(i));
        }
        if let Some(i) = parse("act").filter(|&i| i < l) {
            return Ok(TapPoint::Activation(i));
        }
        Err(Error::UnknownTap(name.to_string()))
    }

    pub fn tap_width(&self, name: &str) -> Result<usize> {
        Ok(match self.resolve_tap(name)? {
            TapPoint::Linear(i) | TapPoint::Activation(i) => self.sizes[i],
        })
    }

    /// Number of linear layers whose parameters influence `tap`.
    pub fn tap_depth(&self, name: &str) -> Result<usize> {
        Ok(match self.resolve_tap(name)? {
            TapPoint::Linear(i) | TapPoint::Activation(i) => i,
        })
    }

    /// Names of the parameter blocks at and below `tap`.
    pub fn blocks_below(&self, tap: &str) -> Result<Vec<String>> {
        let depth = self.tap_depth(tap)?;
        Ok((1..=depth)
            .flat_map(|i| [format!("fc{i}.weight"), format!("fc{i}.bias")])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_tap_name_resolves_to_one_boundary() {
        let a = ArchSpec::desk_mlp(16, 4);
        let names = a.tap_names();
        assert_eq!(names, ["fc1", "act1", "fc2", "act2", "output"]);
        let points: Vec<_> = names.iter().map(|n| a.resolve_tap(n).unwrap()).collect();
        for (i, p) in points.iter().enumerate() {
            assert!(points[i + 1..].iter().all(|q| q != p));
        }
        assert!(a.resolve_tap("act3").is_err());
        assert!(a.resolve_tap("fc0").is_err());
        assert_eq!(a.tap_width("act1").unwrap(), 64);
        assert_eq!(a.default_tap(), "act1");
    }

    #[test]
    fn layout_matches_sizes() {
        let a = ArchSpec::desk_mlp(16, 4);
        let l = a.layout();
        assert_eq!(l.total(), 16 * 64 + 64 + 64 * 32 + 32 + 32 * 4 + 4);
        assert_eq!(l.blocks()[0].shape, vec![64, 16]);
    }
}
