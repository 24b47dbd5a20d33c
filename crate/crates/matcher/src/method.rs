use std::fmt;
use std::str::FromStr;

use lineage_core::similarity::{MetricKind, ALPHA_GRID};
use lineage_core::Tensor;
use lineage_zoo::TaskSpec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MatchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `s(f_p, f_c)`
    Baseline,
    /// One-pass first-order `s(f̄_p, f_c)`
    Approx,
    /// `s(f̄_p, f_c)` on explicitly materialized outputs
    Oracle,
    /// Seeded uniform scores; a null model for the protocol itself.
    Random,
}

/// A scoring method together with the (α, tap) grid searched on validation pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub kind: MetricKind,
    pub mode: Mode,
    pub alphas: Vec<f64>,
    pub taps: Vec<String>,
}

impl Method {
    pub fn new(kind: MetricKind, mode: Mode) -> Self {
        Self {
            kind,
            mode,
            alphas: ALPHA_GRID.to_vec(),
            taps: vec!["act1".into()],
        }
    }

    pub fn baseline(kind: MetricKind) -> Self {
        Self::new(kind, Mode::Baseline)
    }

    pub fn approx(kind: MetricKind) -> Self {
        Self::new(kind, Mode::Approx)
    }

    pub fn oracle(kind: MetricKind) -> Self {
        Self::new(kind, Mode::Oracle)
    }

    pub fn random() -> Self {
        Self::new(MetricKind::L2, Mode::Random)
    }

    pub fn with_alphas(mut self, alphas: &[f64]) -> Self {
        self.alphas = alphas.to_vec();
        self
    }

    pub fn with_taps(mut self, taps: &[&str]) -> Self {
        self.taps = taps.iter().map(|t| t.to_string()).collect();
        self
    }

    /// α values that matter for this mode (baseline and random ignore α).
    pub fn effective_alphas(&self) -> Vec<f64> {
        match self.mode {
            Mode::Approx | Mode::Oracle => self.alphas.clone(),
            Mode::Baseline | Mode::Random => vec![0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        if self.taps.is_empty() {
            return Err(MatchError::Config(format!(
                "method `{self}` has no feature tap"
            )));
        }
        if matches!(self.mode, Mode::Approx | Mode::Oracle) {
            if self.alphas.is_empty() {
                return Err(MatchError::Config(format!(
                    "method `{self}` has an empty α grid"
                )));
            }
            if let Some(a) = self.alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
                return Err(MatchError::Config(format!(
                    "method `{self}`: α = {a} is not finite and >= 0"
                )));
            }
        }
        if self.mode == Mode::Approx && self.kind == MetricKind::Linf {
            return Err(MatchError::Config(
                "linf has no one-pass approximation".into(),
            ));
        }
        Ok(())
    }
}

/// `l2`, `l2+approx`, `cka+oracle`, `random`.
impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            Mode::Baseline => write!(f, "{}", self.kind),
            Mode::Approx => write!(f, "{}+approx", self.kind),
            Mode::Oracle => write!(f, "{}+oracle", self.kind),
            Mode::Random => write!(f, "random"),
        }
    }
}

impl FromStr for Method {
    type Err = MatchError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "random" {
            return Ok(Self::random());
        }
        let (kind, mode) = match s.split_once('+') {
            None => (s, Mode::Baseline),
            Some((k, "approx")) => (k, Mode::Approx),
            Some((k, "oracle")) => (k, Mode::Oracle),
            Some((_, m)) => {
                return Err(MatchError::Config(format!(
                    "unknown method suffix `{m}` in `{s}`"
                )))
            }
        };
        let kind: MetricKind = kind
            .parse()
            .map_err(|e| MatchError::Config(format!("method `{s}`: {e}")))?;
        Ok(Self::new(kind, mode))
    }
}

/// `samples` rows of the task's test split, chosen by a seeded permutation.
pub fn probe_inputs(task: &TaskSpec, samples: usize, seed: u64) -> Result<Tensor> {
    let (_, test) = task.materialize()?;
    let mut idx: Vec<usize> = (0..test.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(samples.min(test.len()));
    Ok(test.select(&idx).x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for s in [
            "l2",
            "l1+approx",
            "cka+oracle",
            "lp:4+approx",
            "random",
            "linf",
        ] {
            assert_eq!(s.parse::<Method>().unwrap().to_string(), s);
        }
        assert!("l2+magic".parse::<Method>().is_err());
        assert!("linf+approx".parse::<Method>().unwrap().validate().is_err());
    }
}
