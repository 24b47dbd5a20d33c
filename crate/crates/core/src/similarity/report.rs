use std::io::Write;

use serde::{Deserialize, Serialize};

use super::kind::MetricKind;

pub const SIMILARITY_CSV_HEADER: &str =
    "parent_id,kind,tap,alpha,baseline,approx,oracle,probability";

/// One candidate parent's scores against a child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub parent_id: String,
    pub kind: MetricKind,
    pub tap: String,
    pub alpha: f64,
    pub baseline: f64,
    pub approx: f64,
    pub oracle: Option<f64>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub child_id: String,
    pub rows: Vec<SimilarityRow>,
}

impl SimilarityReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SIMILARITY_CSV_HEADER}")?;
        for r in &self.rows {
            let oracle = r
                .oracle
                .map_or_else(|| "n/a".to_string(), |v| v.to_string());
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.parent_id, r.kind, r.tap, r.alpha, r.baseline, r.approx, oracle, r.probability
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
