//! Accuracy sliced by one fine-tuning hyperparameter of the descendants.

use std::fmt;
use std::str::FromStr;

use lineage_zoo::{RecordMeta, Zoo};
use serde::{Deserialize, Serialize};

use crate::error::{MatchError, Result};
use crate::eval::{descendant_indices, evaluate_zoo, EvalConfig, EvalReport};
use crate::method::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Lr,
    Iterations,
}

impl Axis {
    pub fn value(self, meta: &RecordMeta) -> f64 {
        match self {
            Axis::Lr => meta.tuning.lr,
            Axis::Iterations => meta.tuning.iterations as f64,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Lr => "lr",
            Axis::Iterations => "iterations",
        })
    }
}

impl FromStr for Axis {
    type Err = MatchError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(Axis::Lr),
            "iterations" => Ok(Axis::Iterations),
            _ => Err(MatchError::Config(format!(
                "unknown sweep axis `{s}` (lr, iterations)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: Axis,
    pub value: f64,
    pub report: EvalReport,
}

/// Distinct axis values among the descendants, ascending.
pub fn axis_values(zoo: &Zoo, axis: Axis, cfg: &EvalConfig) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = descendant_indices(zoo, cfg)?
        .iter()
        .map(|&i| axis.value(&zoo.manifest.records[i]))
        .collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

/// For each method and each requested axis value (all present values when
/// `values` is `None`), evaluates on the descendants tuned with that value.
pub fn sweep(
    zoo: &Zoo,
    axis: Axis,
    values: Option<&[f64]>,
    methods: &[Method],
    cfg: &EvalConfig,
) -> Result<Vec<SweepPoint>> {
    let present = axis_values(zoo, axis, cfg)?;
    let values = match values {
        Some(v) => {
            if let Some(x) = v.iter().find(|x| !present.contains(x)) {
                return Err(MatchError::Config(format!(
                    "no generation-{} record has {axis} = {x} (present: {present:?})",
                    cfg.descendant_generation
                )));
            }
            v.to_vec()
        }
        None => present,
    };
    let all = descendant_indices(zoo, cfg)?;
    let mut out = Vec::new();
    for m in methods {
        for &value in &values {
            let ids = all
                .iter()
                .map(|&i| &zoo.manifest.records[i])
                .filter(|r| axis.value(r) == value)
                .map(|r| r.id.clone())
                .collect();
            let sub = EvalConfig {
                children: Some(ids),
                ..cfg.clone()
            };
            out.push(SweepPoint {
                axis,
                value,
                report: evaluate_zoo(zoo, m, &sub)?,
            });
        }
    }
    Ok(out)
}
