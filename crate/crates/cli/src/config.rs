//! The run configuration: one TOML file, every field optional.
//!
//! All randomness flows from the top-level `seed`: it seeds the zoo build,
//! the probe rows, the validation split, the detector initialization and
//! its sample order. Every command writes the resolved configuration as
//! `config.json` next to its outputs.

use std::path::{Path, PathBuf};

use lineage_core::similarity::ALPHA_GRID;
use lineage_zoo::ZooConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Upper bound on parallel jobs; all cores when absent.
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub zoo: ZooSection,
    pub methods: MethodSection,
    pub eval: EvalSection,
    pub detect: DetectSection,
    pub detector: DetectorSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: None,
            out: None,
            zoo: ZooSection::default(),
            methods: MethodSection::default(),
            eval: EvalSection::default(),
            detect: DetectSection::default(),
            detector: DetectorSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZooSection {
    /// Existing zoo directory read by `detect`, `eval` and `train-detector`.
    pub path: Option<PathBuf>,
    /// Build description for `zoo-build`; the desk preset when absent. Its
    /// `seed` is replaced by the top-level seed.
    pub build: Option<ZooConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSection {
    /// Method names such as `l2`, `l2+approx`, `lp:3+oracle`, `random`.
    pub list: Vec<String>,
    /// α grid searched on the validation split.
    pub alphas: Vec<f64>,
    /// Feature taps searched on the validation split.
    pub taps: Vec<String>,
}

impl Default for MethodSection {
    fn default() -> Self {
        Self {
            list: vec![
                "l1".into(),
                "l2".into(),
                "l1+approx".into(),
                "l2+approx".into(),
            ],
            alphas: ALPHA_GRID.to_vec(),
            taps: vec!["act1".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ancestor_generation: u32,
    pub descendant_generation: u32,
    /// Probe rows per descendant task.
    pub samples: usize,
    pub validation_fraction: f64,
    /// Entry budget for explicit Jacobians; oracle cells above it are `n/a`.
    pub oracle_budget: usize,
    pub withhold: Vec<String>,
    /// Also write the accuracy of every (ancestor, descendant) generation pair.
    pub gap_matrix: bool,
    pub scatter: Option<ScatterSection>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = lineage_matcher::EvalConfig::default();
        Self {
            ancestor_generation: e.ancestor_generation,
            descendant_generation: e.descendant_generation,
            samples: e.samples,
            validation_fraction: e.validation_fraction,
            oracle_budget: e.oracle_budget,
            withhold: Vec::new(),
            gap_matrix: false,
            scatter: None,
        }
    }
}

/// (baseline, approx, oracle) rows for every (candidate, descendant) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterSection {
    pub kind: String,
    pub alpha: f64,
    #[serde(default = "default_tap")]
    pub tap: String,
}

fn default_tap() -> String {
    "act1".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    pub child: Option<String>,
    pub method: String,
    pub alpha: f64,
    pub tap: String,
    /// Add the child's own record to the candidates (a self-match check).
    pub include_self: bool,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self {
            child: None,
            method: "l2+approx".into(),
            alpha: 1.0,
            tap: default_tap(),
            include_self: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Probe rows behind the feature plane.
    pub samples: usize,
    pub weight_block: String,
    pub feature_tap: String,
    pub use_weights: bool,
    pub use_features: bool,
    pub no_parent: bool,
    /// Candidate removed from the set; `auto` picks the most isolated one.
    pub withhold_parent: Option<String>,
    /// Directory of an earlier `train-detector` run to continue from.
    pub resume: Option<PathBuf>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let planes = lineage_detector::PlaneSpec::default();
        Self {
            epochs: 15,
            lr: 0.01,
            batch: 1,
            samples: planes.samples,
            weight_block: planes.weight_block,
            feature_tap: planes.feature_tap,
            use_weights: true,
            use_features: true,
            no_parent: false,
            withhold_parent: None,
            resume: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        Self::from_toml(&text).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// The zoo build description with the top-level seed applied.
    pub fn zoo_build(&self) -> ZooConfig {
        let mut cfg = self
            .zoo
            .build
            .clone()
            .unwrap_or_else(|| ZooConfig::desk(self.seed));
        cfg.seed = self.seed;
        cfg
    }

    pub fn eval_config(&self) -> lineage_matcher::EvalConfig {
        lineage_matcher::EvalConfig {
            ancestor_generation: self.eval.ancestor_generation,
            descendant_generation: self.eval.descendant_generation,
            samples: self.eval.samples,
            probe_seed: self.seed,
            validation_fraction: self.eval.validation_fraction,
            split_seed: self.seed,
            oracle_budget: self.eval.oracle_budget,
            children: None,
            withhold: self.eval.withhold.clone(),
        }
    }

    pub fn zoo_path(&self) -> Result<&Path> {
        self.zoo
            .path
            .as_deref()
            .ok_or_else(|| CliError::Config("no zoo given (use --zoo or [zoo] path)".into()))
    }

    pub fn out_path(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory given (use --out)".into()))
    }
}

/// What every command writes as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub command: String,
    pub config: RunConfig,
}

impl ResolvedConfig {
    /// Pretty JSON with a trailing newline; field order is fixed by the types.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("configuration serializes");
        s.push('\n');
        s
    }
}
