//! Per-pair baseline, one-pass and oracle scores side by side.

use lineage_core::similarity::{approx_terms, oracle_similarity, MetricKind};
use lineage_core::Error as CoreError;
use lineage_zoo::Zoo;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{candidate_indices, descendant_indices, EvalConfig};
use crate::method::probe_inputs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub parent_id: String,
    pub child_id: String,
    pub is_parent: bool,
    pub baseline: f64,
    pub approx: f64,
    /// `None` when the explicit Jacobian exceeds the budget.
    pub oracle: Option<f64>,
}

/// All (candidate, descendant) pairs of `cfg`'s generations, scored at one α and tap.
pub fn scatter(
    zoo: &Zoo,
    kind: MetricKind,
    alpha: f64,
    tap: &str,
    cfg: &EvalConfig,
) -> Result<Vec<ScatterRow>> {
    cfg.validate()?;
    let cands = candidate_indices(zoo, cfg);
    let children = descendant_indices(zoo, cfg)?;
    let pairs: Vec<(usize, usize)> = children
        .iter()
        .flat_map(|&c| cands.iter().map(move |&p| (p, c)))
        .collect();
    pairs
        .par_iter()
        .map(|&(p, c)| {
            let (ps, cs) = (zoo.subject(p), zoo.subject(c));
            let task = &zoo.manifest.tasks[zoo.manifest.records[c].task];
            let probe = probe_inputs(task, cfg.samples, cfg.probe_seed)?;
            let approx = approx_terms(kind, ps, cs, &probe, tap)?.at(alpha);
            let oracle =
                match oracle_similarity(kind, ps, cs, &probe, tap, alpha, cfg.oracle_budget) {
                    Ok(o) => Some(o.score),
                    Err(CoreError::OracleUnavailable(_)) => None,
                    Err(e) => return Err(e.into()),
                };
            let child = &zoo.manifest.records[c];
            Ok(ScatterRow {
                parent_id: ps.id.to_string(),
                child_id: cs.id.to_string(),
                is_parent: zoo
                    .manifest
                    .ancestor_at(&child.id, zoo.manifest.records[p].generation)
                    .map(|a| a.id.as_str())
                    == Some(ps.id),
                baseline: approx.baseline,
                approx: approx.score,
                oracle,
            })
        })
        .collect()
}
