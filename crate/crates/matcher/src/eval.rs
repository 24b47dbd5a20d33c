//! The identification protocol: score every descendant against every
//! candidate ancestor, pick α and the feature tap on a validation split, and
//! report accuracy on the held-out test split.

use std::collections::BTreeMap;

use lineage_core::network::{features, DEFAULT_JACOBIAN_BUDGET};
use lineage_core::similarity::{approx_terms, baseline_similarity, oracle_similarity};
use lineage_core::Tensor;
use lineage_zoo::{derive_seed, Zoo};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{match_parents, MatchDistribution};
use crate::error::{MatchError, Result};
use crate::method::{probe_inputs, Method, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Generation of the candidate ancestors (1 = roots).
    pub ancestor_generation: u32,
    /// Generation of the models whose ancestor is sought.
    pub descendant_generation: u32,
    /// Probe rows drawn from each descendant's task test split.
    pub samples: usize,
    pub probe_seed: u64,
    /// Share of descendants used to choose α and the tap.
    pub validation_fraction: f64,
    pub split_seed: u64,
    /// Entry budget for the oracle's explicit Jacobians.
    pub oracle_budget: usize,
    /// Restrict the descendants to these ids.
    pub children: Option<Vec<String>>,
    /// Candidate ids removed from the candidate set.
    pub withhold: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ancestor_generation: 1,
            descendant_generation: 2,
            samples: 64,
            probe_seed: 0,
            validation_fraction: 0.2,
            split_seed: 0,
            oracle_budget: DEFAULT_JACOBIAN_BUDGET,
            children: None,
            withhold: Vec::new(),
        }
    }
}

impl EvalConfig {
    pub fn gap(ancestor_generation: u32, descendant_generation: u32) -> Self {
        Self {
            ancestor_generation,
            descendant_generation,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ancestor_generation == 0 || self.descendant_generation <= self.ancestor_generation {
            return Err(MatchError::Config(format!(
                "descendant generation {} must exceed ancestor generation {} >= 1",
                self.descendant_generation, self.ancestor_generation
            )));
        }
        if self.samples == 0 {
            return Err(MatchError::Config("probe needs at least one sample".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(MatchError::Config(format!(
                "validation fraction {} is outside [0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Validation,
    Test,
}

/// Which descendants tune the method and which measure it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    /// Seeded split of `ids` (order-insensitive); the test side is never
    /// empty when `ids` is not.
    pub fn seeded(ids: &[String], validation_fraction: f64, seed: u64) -> Self {
        let mut ids = ids.to_vec();
        ids.sort();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = ((ids.len() as f64 * validation_fraction).round() as usize)
            .min(ids.len().saturating_sub(1));
        let test = ids.split_off(n_val);
        Self {
            validation: ids,
            test,
        }
    }
}

/// Scores of descendants against candidates for every (α, tap) grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub candidates: Vec<String>,
    pub children: Vec<String>,
    /// True ancestor of each child, as a candidate index.
    pub truth: Vec<usize>,
    pub grid: Vec<(f64, String)>,
    /// `scores[child][grid point][candidate]`
    pub scores: Vec<Vec<Vec<f64>>>,
    /// Descendants whose true ancestor is not a candidate.
    pub excluded: Vec<String>,
}

impl ScoreTable {
    pub fn distribution(&self, child: usize, point: usize) -> Result<MatchDistribution> {
        match_parents(self.candidates.clone(), self.scores[child][point].clone())
    }

    fn correct(&self, child: usize, point: usize) -> bool {
        let s = &self.scores[child][point];
        let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        s.iter().position(|&v| v == top) == Some(self.truth[child])
    }

    /// Fraction of `children` (table rows) whose argmax is the true ancestor.
    pub fn accuracy(&self, children: &[usize], point: usize) -> f64 {
        if children.is_empty() {
            return f64::NAN;
        }
        children.iter().filter(|&&c| self.correct(c, point)).count() as f64 / children.len() as f64
    }
}

/// Promoted records of the ancestor generation, minus withheld ids.
pub fn candidate_indices(zoo: &Zoo, cfg: &EvalConfig) -> Vec<usize> {
    zoo.manifest
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            r.generation == cfg.ancestor_generation && r.promoted && !cfg.withhold.contains(&r.id)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Descendant records, in manifest order, after the `children` filter.
pub fn descendant_indices(zoo: &Zoo, cfg: &EvalConfig) -> Result<Vec<usize>> {
    if let Some(ids) = &cfg.children {
        for id in ids {
            match zoo.manifest.record(id) {
                None => return Err(MatchError::Config(format!("no record `{id}` in the zoo"))),
                Some(r) if r.generation != cfg.descendant_generation => {
                    return Err(MatchError::Config(format!(
                        "`{id}` is generation {}, not {}",
                        r.generation, cfg.descendant_generation
                    )))
                }
                Some(_) => {}
            }
        }
    }
    Ok(zoo
        .manifest
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.generation == cfg.descendant_generation)
        .filter(|(_, r)| cfg.children.as_ref().is_none_or(|ids| ids.contains(&r.id)))
        .map(|(i, _)| i)
        .collect())
}

fn probes(zoo: &Zoo, children: &[usize], cfg: &EvalConfig) -> Result<BTreeMap<usize, Tensor>> {
    let mut out = BTreeMap::new();
    for &c in children {
        let task = zoo.manifest.records[c].task;
        if let std::collections::btree_map::Entry::Vacant(e) = out.entry(task) {
            e.insert(probe_inputs(
                &zoo.manifest.tasks[task],
                cfg.samples,
                cfg.probe_seed,
            )?);
        }
    }
    Ok(out)
}

fn score_child(
    zoo: &Zoo,
    method: &Method,
    cfg: &EvalConfig,
    candidates: &[usize],
    child: usize,
    probe: &Tensor,
) -> Result<Vec<Vec<f64>>> {
    let alphas = method.effective_alphas();
    let npoints = alphas.len() * method.taps.len();
    let mut scores = vec![vec![0.0; candidates.len()]; npoints];
    if method.mode == Mode::Random {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.split_seed, child as u64, u32::MAX));
        for row in &mut scores {
            row.iter_mut().for_each(|s| *s = rng.random::<f64>());
        }
        return Ok(scores);
    }
    let c = zoo.subject(child);
    for (t, tap) in method.taps.iter().enumerate() {
        let child_features = match method.mode {
            Mode::Baseline => Some(features(c.arch, c.params, probe, tap)?),
            _ => None,
        };
        for (m, &cand) in candidates.iter().enumerate() {
            let p = zoo.subject(cand);
            match method.mode {
                Mode::Baseline => {
                    let x = features(p.arch, p.params, probe, tap)?;
                    let s = baseline_similarity(
                        method.kind,
                        &x,
                        child_features.as_ref().expect("set above"),
                    )?;
                    scores[t * alphas.len()][m] = s;
                }
                Mode::Approx => {
                    // One backward pass per (parent, child, metric); α only rescales the slope.
                    let terms = approx_terms(method.kind, p, c, probe, tap)?;
                    for (a, &alpha) in alphas.iter().enumerate() {
                        scores[t * alphas.len() + a][m] = terms.at(alpha).score;
                    }
                }
                Mode::Oracle => {
                    for (a, &alpha) in alphas.iter().enumerate() {
                        scores[t * alphas.len() + a][m] = oracle_similarity(
                            method.kind,
                            p,
                            c,
                            probe,
                            tap,
                            alpha,
                            cfg.oracle_budget,
                        )?
                        .score;
                    }
                }
                Mode::Random => unreachable!(),
            }
        }
    }
    Ok(scores)
}

/// Match distribution of one record against the configured candidates plus
/// the `extra` record ids, at the method's single (α, tap) point.
pub fn detect_child(
    zoo: &Zoo,
    method: &Method,
    cfg: &EvalConfig,
    child: &str,
    extra: &[String],
) -> Result<MatchDistribution> {
    method.validate()?;
    cfg.validate()?;
    if method.effective_alphas().len() != 1 || method.taps.len() != 1 {
        return Err(MatchError::Config(
            "detection needs exactly one α and one tap".into(),
        ));
    }
    let c = zoo.index_of(child).ok_or_else(|| {
        let ids: Vec<&str> = zoo
            .manifest
            .records
            .iter()
            .filter(|r| r.generation == cfg.descendant_generation)
            .map(|r| r.id.as_str())
            .collect();
        MatchError::Config(format!(
            "no record `{child}` in the zoo; generation {} ids: {}",
            cfg.descendant_generation,
            ids.join(", ")
        ))
    })?;
    let mut candidates = candidate_indices(zoo, cfg);
    for id in extra {
        let i = zoo
            .index_of(id)
            .ok_or_else(|| MatchError::Config(format!("no record `{id}` in the zoo")))?;
        if !candidates.contains(&i) {
            candidates.push(i);
        }
    }
    if candidates.is_empty() {
        return Err(MatchError::Config(format!(
            "no candidates at generation {}",
            cfg.ancestor_generation
        )));
    }
    let task = &zoo.manifest.tasks[zoo.manifest.records[c].task];
    let probe = probe_inputs(task, cfg.samples, cfg.probe_seed)?;
    let scores = score_child(zoo, method, cfg, &candidates, c, &probe)?.remove(0);
    let ids = candidates
        .iter()
        .map(|&i| zoo.manifest.records[i].id.clone())
        .collect();
    match_parents(ids, scores)
}

/// Scores every selected descendant against every candidate, in parallel,
/// with rows in manifest order.
pub fn score_table(zoo: &Zoo, method: &Method, cfg: &EvalConfig) -> Result<ScoreTable> {
    method.validate()?;
    cfg.validate()?;
    let candidates = candidate_indices(zoo, cfg);
    if candidates.is_empty() {
        return Err(MatchError::Config(format!(
            "no candidate ancestors at generation {}",
            cfg.ancestor_generation
        )));
    }
    let mut children = Vec::new();
    let mut truth = Vec::new();
    let mut excluded = Vec::new();
    for c in descendant_indices(zoo, cfg)? {
        let id = &zoo.manifest.records[c].id;
        let anc = zoo.manifest.ancestor_at(id, cfg.ancestor_generation);
        match anc.and_then(|a| {
            candidates
                .iter()
                .position(|&i| zoo.manifest.records[i].id == a.id)
        }) {
            Some(t) => {
                children.push(c);
                truth.push(t);
            }
            None => excluded.push(id.clone()),
        }
    }
    let probes = probes(zoo, &children, cfg)?;
    let scores = children
        .par_iter()
        .map(|&c| {
            score_child(
                zoo,
                method,
                cfg,
                &candidates,
                c,
                &probes[&zoo.manifest.records[c].task],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = method
        .taps
        .iter()
        .flat_map(|t| {
            method
                .effective_alphas()
                .into_iter()
                .map(move |a| (a, t.clone()))
        })
        .collect();
    Ok(ScoreTable {
        candidates: candidates
            .iter()
            .map(|&i| zoo.manifest.records[i].id.clone())
            .collect(),
        children: children
            .iter()
            .map(|&i| zoo.manifest.records[i].id.clone())
            .collect(),
        truth,
        grid,
        scores,
        excluded,
    })
}

/// Outcome for one descendant under the selected (α, tap).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub child_id: String,
    pub true_parent: String,
    pub predicted: String,
    pub correct: bool,
    pub split: Split,
    pub true_probability: f64,
    pub predicted_probability: f64,
    /// Whether the top score was shared by several candidates.
    pub tied: bool,
    pub lr: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub ancestor_generation: u32,
    pub descendant_generation: u32,
    pub candidates: Vec<String>,
    /// α and tap chosen on the validation split.
    pub alpha: f64,
    pub tap: String,
    pub validation_accuracy: Option<f64>,
    /// Test-split accuracy.
    pub accuracy: f64,
    pub n_validation: usize,
    pub n_test: usize,
    pub excluded: Vec<String>,
    /// Only one candidate: accuracy is trivially 1 and says nothing.
    pub single_candidate: bool,
    pub pairs: Vec<PairOutcome>,
}

/// Picks the grid point with the best validation accuracy (first on ties; the
/// first point when there is no validation data) and reports on `split.test`.
pub fn evaluate_table(
    zoo: &Zoo,
    method: &Method,
    cfg: &EvalConfig,
    table: &ScoreTable,
    split: &SplitSpec,
) -> Result<EvalReport> {
    let rows = |ids: &[String]| -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                table.children.iter().position(|c| c == id).ok_or_else(|| {
                    MatchError::Config(format!("`{id}` is not an evaluable descendant"))
                })
            })
            .collect()
    };
    let val = rows(&split.validation)?;
    let test = rows(&split.test)?;
    if test.is_empty() {
        return Err(MatchError::Config("no descendants to evaluate".into()));
    }
    let mut best = 0;
    let mut best_acc = None;
    if !val.is_empty() {
        for g in 0..table.grid.len() {
            let acc = table.accuracy(&val, g);
            if best_acc.is_none_or(|b| acc > b) {
                best = g;
                best_acc = Some(acc);
            }
        }
    }
    let mut pairs = Vec::new();
    for (rows, which) in [(&val, Split::Validation), (&test, Split::Test)] {
        for &r in rows {
            let dist = table.distribution(r, best)?;
            let child = zoo
                .manifest
                .record(&table.children[r])
                .expect("child in zoo");
            pairs.push(PairOutcome {
                child_id: child.id.clone(),
                true_parent: table.candidates[table.truth[r]].clone(),
                predicted: dist.predicted_id().to_string(),
                correct: table.correct(r, best),
                split: which,
                true_probability: dist.probabilities[table.truth[r]],
                predicted_probability: dist.probabilities[dist.prediction],
                tied: dist.tied.len() > 1,
                lr: child.tuning.lr,
                iterations: child.tuning.iterations,
            });
        }
    }
    let (alpha, tap) = table.grid[best].clone();
    Ok(EvalReport {
        method: method.to_string(),
        ancestor_generation: cfg.ancestor_generation,
        descendant_generation: cfg.descendant_generation,
        candidates: table.candidates.clone(),
        alpha,
        tap,
        validation_accuracy: best_acc,
        accuracy: table.accuracy(&test, best),
        n_validation: val.len(),
        n_test: test.len(),
        excluded: table.excluded.clone(),
        single_candidate: table.candidates.len() == 1,
        pairs,
    })
}

/// Scores, splits by `cfg.split_seed` and evaluates.
pub fn evaluate_zoo(zoo: &Zoo, method: &Method, cfg: &EvalConfig) -> Result<EvalReport> {
    let table = score_table(zoo, method, cfg)?;
    let split = SplitSpec::seeded(&table.children, cfg.validation_fraction, cfg.split_seed);
    evaluate_table(zoo, method, cfg, &table, &split)
}

/// Evaluates on a caller-supplied split (e.g. the one a learned detector used).
pub fn evaluate_with_split(
    zoo: &Zoo,
    method: &Method,
    cfg: &EvalConfig,
    split: &SplitSpec,
) -> Result<EvalReport> {
    let table = score_table(zoo, method, cfg)?;
    evaluate_table(zoo, method, cfg, &table, split)
}

/// One report per method; an empty method list yields an empty list.
pub fn evaluate_methods(
    zoo: &Zoo,
    methods: &[Method],
    cfg: &EvalConfig,
) -> Result<Vec<EvalReport>> {
    methods.iter().map(|m| evaluate_zoo(zoo, m, cfg)).collect()
}
