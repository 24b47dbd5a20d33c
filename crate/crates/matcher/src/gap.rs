//! Accuracy as a function of the distance between candidate and descendant
//! generations.

use serde::{Deserialize, Serialize};

use lineage_zoo::Zoo;

use crate::error::Result;
use crate::eval::{evaluate_zoo, EvalConfig};
use crate::method::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCell {
    pub ancestor_generation: u32,
    pub descendant_generation: u32,
    pub accuracy: f64,
    pub n_test: usize,
    pub alpha: f64,
    pub tap: String,
}

impl GapCell {
    pub fn gap(&self) -> u32 {
        self.descendant_generation - self.ancestor_generation
    }
}

/// Every (ancestor, descendant) generation pair present in the zoo, upper
/// triangle only, with `base`'s probe and split settings.
pub fn gap_matrix(zoo: &Zoo, method: &Method, base: &EvalConfig) -> Result<Vec<GapCell>> {
    let gens: Vec<u32> = zoo.manifest.generations().into_iter().collect();
    let mut cells = Vec::new();
    for (i, &a) in gens.iter().enumerate() {
        for &d in &gens[i + 1..] {
            let cfg = EvalConfig {
                ancestor_generation: a,
                descendant_generation: d,
                ..base.clone()
            };
            let r = evaluate_zoo(zoo, method, &cfg)?;
            cells.push(GapCell {
                ancestor_generation: a,
                descendant_generation: d,
                accuracy: r.accuracy,
                n_test: r.n_test,
                alpha: r.alpha,
                tap: r.tap,
            });
        }
    }
    Ok(cells)
}
