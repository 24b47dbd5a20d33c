//! CSV and JSON renderings of evaluation results.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::eval::{EvalReport, Split};
use crate::stats::mean_std;

/// One row per (method, descendant).
pub const PAIRS_CSV_HEADER: &str =
    "method,ancestor_generation,descendant_generation,child_id,true_parent,\
predicted,correct,split,true_probability,predicted_probability,tied,alpha,tap,lr,iterations";

pub fn write_pairs_csv<W: Write>(reports: &[EvalReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{PAIRS_CSV_HEADER}")?;
    for r in reports {
        for p in &r.pairs {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.ancestor_generation,
                r.descendant_generation,
                p.child_id,
                p.true_parent,
                p.predicted,
                p.correct,
                match p.split {
                    Split::Validation => "validation",
                    Split::Test => "test",
                },
                p.true_probability,
                p.predicted_probability,
                p.tied,
                r.alpha,
                r.tap,
                p.lr,
                p.iterations
            )?;
        }
    }
    Ok(())
}

/// Test accuracy of one method across runs (e.g. zoo seeds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Groups reports by method name, in first-seen order.
pub fn summarize(reports: &[EvalReport]) -> Vec<MethodSummary> {
    let mut order = Vec::new();
    let mut by: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in reports {
        if !by.contains_key(r.method.as_str()) {
            order.push(r.method.as_str());
        }
        by.entry(&r.method).or_default().push(r.accuracy);
    }
    order
        .into_iter()
        .map(|m| {
            let accuracies = by[m].clone();
            let (mean, std) = mean_std(&accuracies);
            MethodSummary {
                method: m.to_string(),
                accuracies,
                mean,
                std,
            }
        })
        .collect()
}

pub fn summary_json(reports: &[EvalReport]) -> String {
    let mut s = serde_json::to_string_pretty(&summarize(reports)).expect("summary serializes");
    s.push('\n');
    s
}
