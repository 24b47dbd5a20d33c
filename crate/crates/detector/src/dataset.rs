//! Detector samples built from a zoo: for every descendant, one stacked
//! input per candidate ancestor plus the index of the true one.

use lineage_core::network::features;
use lineage_core::similarity::Subject;
use lineage_core::Tensor;
use lineage_matcher::{candidate_indices, descendant_indices, probe_inputs, EvalConfig, SplitSpec};
use lineage_zoo::Zoo;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DetectorError, Result};
use crate::model::StackedInput;
use crate::planes::{reshape_to_planes, PlaneShape};

/// Which parameters and features become planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    /// Parameter block used as the weight plane.
    pub weight_block: String,
    /// Feature tap used as the feature plane.
    pub feature_tap: String,
    /// Probe rows behind the feature plane, drawn from the descendant's task.
    pub samples: usize,
    pub probe_seed: u64,
    /// Zero-pad counts without an exact near-square factorization.
    pub pad: bool,
}

impl Default for PlaneSpec {
    fn default() -> Self {
        Self {
            weight_block: "fc1.weight".into(),
            feature_tap: "act1".into(),
            samples: 32,
            probe_seed: 0,
            pad: true,
        }
    }
}

fn plane(values: &[f64], pad: bool) -> Result<Tensor> {
    Ok(reshape_to_planes(values, PlaneShape::for_count(values.len()), pad)?.values)
}

/// Stacked weight and feature planes of one (parent, child) pair.
pub fn stacked_input(
    parent: Subject,
    child: Subject,
    probe: &Tensor,
    spec: &PlaneSpec,
) -> Result<StackedInput> {
    fn block<'a>(s: Subject<'a>, spec: &PlaneSpec) -> Result<&'a [f64]> {
        s.params.block_by_name(&spec.weight_block).ok_or_else(|| {
            DetectorError::Contract(format!(
                "`{}` has no parameter block `{}`",
                s.id, spec.weight_block
            ))
        })
    }
    let (wp, wc) = (block(parent, spec)?, block(child, spec)?);
    if wp.len() != wc.len() {
        return Err(DetectorError::Contract(format!(
            "block `{}` differs in size between `{}` and `{}`",
            spec.weight_block, parent.id, child.id
        )));
    }
    let fp = features(parent.arch, parent.params, probe, &spec.feature_tap)?;
    let fc = features(child.arch, child.params, probe, &spec.feature_tap)?;
    Ok(StackedInput {
        weights: Some(StackedInput::stack(
            &plane(wp, spec.pad)?,
            &plane(wc, spec.pad)?,
        )?),
        features: Some(StackedInput::stack(
            &plane(fp.data(), spec.pad)?,
            &plane(fc.data(), spec.pad)?,
        )?),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSample {
    pub child_id: String,
    pub candidates: Vec<String>,
    pub inputs: Vec<StackedInput>,
    /// Index of the true ancestor, or `candidates.len()` for "no parent".
    pub label: usize,
}

impl DetectorSample {
    pub fn has_parent(&self) -> bool {
        self.label < self.candidates.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub ancestor_generation: u32,
    pub descendant_generation: u32,
    /// Candidates removed from the set; their descendants are labeled
    /// "no parent" in no-parent mode and dropped otherwise.
    pub withhold: Vec<String>,
    pub no_parent: bool,
    pub planes: PlaneSpec,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            ancestor_generation: 1,
            descendant_generation: 2,
            withhold: Vec::new(),
            no_parent: false,
            planes: PlaneSpec::default(),
        }
    }
}

/// Samples in manifest order, plus the ids of descendants that were dropped.
pub fn build_samples(zoo: &Zoo, cfg: &SampleConfig) -> Result<(Vec<DetectorSample>, Vec<String>)> {
    let ecfg = EvalConfig {
        ancestor_generation: cfg.ancestor_generation,
        descendant_generation: cfg.descendant_generation,
        samples: cfg.planes.samples,
        probe_seed: cfg.planes.probe_seed,
        withhold: cfg.withhold.clone(),
        ..EvalConfig::default()
    };
    ecfg.validate()?;
    if let Some(id) = cfg
        .withhold
        .iter()
        .find(|id| zoo.manifest.record(id).is_none())
    {
        return Err(DetectorError::Config(format!(
            "withheld parent `{id}` is not in the zoo"
        )));
    }
    let cands = candidate_indices(zoo, &ecfg);
    if cands.is_empty() {
        return Err(DetectorError::Config(format!(
            "no candidates at generation {}",
            cfg.ancestor_generation
        )));
    }
    let ids: Vec<String> = cands
        .iter()
        .map(|&i| zoo.manifest.records[i].id.clone())
        .collect();
    let mut jobs = Vec::new();
    let mut dropped = Vec::new();
    for c in descendant_indices(zoo, &ecfg)? {
        let id = &zoo.manifest.records[c].id;
        let truth = zoo
            .manifest
            .ancestor_at(id, cfg.ancestor_generation)
            .map(|a| a.id.clone());
        match truth.and_then(|t| ids.iter().position(|i| *i == t)) {
            Some(label) => jobs.push((c, label)),
            None if cfg.no_parent => jobs.push((c, ids.len())),
            None => dropped.push(id.clone()),
        }
    }
    let samples = jobs
        .par_iter()
        .map(|&(c, label)| {
            let task = &zoo.manifest.tasks[zoo.manifest.records[c].task];
            let probe = probe_inputs(task, cfg.planes.samples, cfg.planes.probe_seed)?;
            let inputs = cands
                .iter()
                .map(|&p| stacked_input(zoo.subject(p), zoo.subject(c), &probe, &cfg.planes))
                .collect::<Result<Vec<_>>>()?;
            Ok(DetectorSample {
                child_id: zoo.manifest.records[c].id.clone(),
                candidates: ids.clone(),
                inputs,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, dropped))
}

/// The promoted record at `generation` whose nearest other promoted record
/// (Euclidean distance over all parameters) is farthest away.
///
/// Withholding it gives "no parent" descendants that have no near-duplicate
/// of their true parent left among the candidates; siblings trained from
/// the same initialization with a tiny learning rate can otherwise be
/// indistinguishable from the withheld model.
pub fn most_isolated_candidate(zoo: &Zoo, generation: u32) -> Result<String> {
    let recs = &zoo.manifest.records;
    let idx: Vec<usize> = (0..recs.len())
        .filter(|&i| recs[i].generation == generation && recs[i].promoted)
        .collect();
    if idx.len() < 2 {
        return Err(DetectorError::Config(format!(
            "generation {generation} has {} promoted records; need at least 2",
            idx.len()
        )));
    }
    let dist = |a: usize, b: usize| -> f64 {
        let (x, y) = (zoo.params[a].values(), zoo.params[b].values());
        x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>()
    };
    let nearest = |a: usize| {
        idx.iter()
            .filter(|&&b| b != a)
            .map(|&b| dist(a, b))
            .fold(f64::INFINITY, f64::min)
    };
    let mut best = (idx[0], nearest(idx[0]));
    for &i in &idx[1..] {
        let d = nearest(i);
        if d > best.1 {
            best = (i, d);
        }
    }
    Ok(recs[best.0].id.clone())
}

/// Train / validation / test sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl DetectorSplit {
    /// Seeded 7:1:2 split, stratified by label so that every class
    /// (including "no parent") is spread over the three partitions.
    pub fn stratified(samples: &[DetectorSample], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        labels.sort_unstable();
        labels.dedup();
        let mut split = Self {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for label in labels {
            let mut idx: Vec<usize> = (0..samples.len())
                .filter(|&i| samples[i].label == label)
                .collect();
            idx.shuffle(&mut rng);
            let n = idx.len() as f64;
            let n_train = (n * 0.7).round() as usize;
            let n_val = ((n * 0.1).round() as usize).min(idx.len() - n_train);
            split.train.extend(&idx[..n_train]);
            split.validation.extend(&idx[n_train..n_train + n_val]);
            split.test.extend(&idx[n_train + n_val..]);
        }
        for (name, part) in [
            ("train", &split.train),
            ("validation", &split.validation),
            ("test", &split.test),
        ] {
            if part.is_empty() {
                return Err(DetectorError::Config(format!(
                    "the {name} partition is empty: {} samples are too few for a 7:1:2 split",
                    samples.len()
                )));
            }
        }
        Ok(split)
    }

    /// The same partition by child id, for learning-free methods: they tune
    /// on everything the detector may see and are scored on its test set.
    pub fn as_match_split(&self, samples: &[DetectorSample]) -> SplitSpec {
        let ids = |ix: &[usize]| {
            ix.iter()
                .map(|&i| samples[i].child_id.clone())
                .collect::<Vec<_>>()
        };
        let mut validation = ids(&self.train);
        validation.extend(ids(&self.validation));
        SplitSpec {
            validation,
            test: ids(&self.test),
        }
    }
}
