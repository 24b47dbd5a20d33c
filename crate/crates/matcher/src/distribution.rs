use serde::{Deserialize, Serialize};

use crate::error::{MatchError, Result};

/// Softmax over per-parent similarity scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDistribution {
    pub parent_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Index of the highest score; the lowest index wins ties.
    pub prediction: usize,
    /// Every index sharing the top score (length > 1 means a tie was broken).
    pub tied: Vec<usize>,
}

impl MatchDistribution {
    pub fn predicted_id(&self) -> &str {
        &self.parent_ids[self.prediction]
    }

    /// Candidate indices by decreasing probability (stable on ties).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }
}

/// `P_m = e^{s_m} / Σ_l e^{s_l}` with max subtraction; prediction is the argmax.
pub fn match_parents(parent_ids: Vec<String>, scores: Vec<f64>) -> Result<MatchDistribution> {
    if scores.is_empty() {
        return Err(MatchError::Contract(
            "matching needs at least one parent candidate".into(),
        ));
    }
    if parent_ids.len() != scores.len() {
        return Err(MatchError::Contract(format!(
            "{} parent ids for {} scores",
            parent_ids.len(),
            scores.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MatchError::Contract(format!(
            "score of `{}` is not finite",
            parent_ids[i]
        )));
    }
    let probabilities = lineage_core::similarity::softmax(&scores);
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] == top).collect();
    Ok(MatchDistribution {
        parent_ids,
        prediction: tied[0],
        tied,
        scores,
        probabilities,
    })
}
