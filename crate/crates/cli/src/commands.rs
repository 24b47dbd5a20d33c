//! The four subcommands. Each returns the warnings that turn exit code 0
//! into 2; errors map to exit code 1.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use lineage_core::similarity::MetricKind;
use lineage_detector::{
    build_samples, evaluate, load_train_state, most_isolated_candidate, no_parent_recall, predict,
    save_detector, save_train_state, DetectorConfig, DetectorParams, DetectorSplit, PlaneSpec,
    SampleConfig, TrainConfig, TrainState,
};
use lineage_matcher::{
    detect_child, evaluate_zoo, gap_matrix, pearson, scatter, write_pairs_csv, EvalReport,
    MatchError, Method,
};
use lineage_zoo::{build_zoo, Zoo};
use serde::Serialize;
use serde_json::json;

use crate::config::{ResolvedConfig, RunConfig};
use crate::error::{CliError, Result};
use crate::output::Staged;

pub const SUMMARY_CSV_HEADER: &str =
    "method,accuracy,validation_accuracy,alpha,tap,n_validation,n_test,excluded";
pub const GAP_CSV_HEADER: &str =
    "method,ancestor_generation,descendant_generation,gap,accuracy,n_test,alpha,tap";
pub const SCATTER_CSV_HEADER: &str = "parent_id,child_id,is_parent,baseline,approx,oracle";
pub const PREDICTIONS_CSV_HEADER: &str = "child_id,true_parent,predicted,correct";

/// Result of a command that ran to completion.
#[derive(Debug, Default)]
pub struct Outcome {
    pub out: Option<PathBuf>,
    pub warnings: Vec<String>,
}

fn resolved(command: &str, cfg: &RunConfig) -> String {
    ResolvedConfig {
        command: command.into(),
        config: cfg.clone(),
    }
    .to_json()
}

fn load_zoo(cfg: &RunConfig) -> Result<Zoo> {
    Ok(Zoo::load(cfg.zoo_path()?)?)
}

fn parse_method(name: &str, alphas: &[f64], taps: &[String]) -> Result<Method> {
    let taps: Vec<&str> = taps.iter().map(String::as_str).collect();
    let m =
        Method::from_str(name).map_err(|e| CliError::Config(format!("method `{name}`: {e}")))?;
    let m = m.with_alphas(alphas).with_taps(&taps);
    m.validate()?;
    Ok(m)
}

pub fn zoo_build(cfg: &RunConfig) -> Result<Outcome> {
    let dest = cfg.out_path()?.to_path_buf();
    let stage = Staged::new(&dest)?;
    let outcome = build_zoo(&cfg.zoo_build())?;
    outcome.zoo.save(stage.path())?;
    stage.write("config.json", resolved("zoo-build", cfg))?;
    let out = stage.commit()?;
    let zoo = &outcome.zoo;
    println!(
        "zoo with {} records in {} generations -> {}",
        zoo.len(),
        zoo.manifest.generations().len(),
        out.display()
    );
    Ok(Outcome {
        out: Some(out),
        warnings: zoo.manifest.warnings.clone(),
    })
}

pub fn detect(cfg: &RunConfig) -> Result<Outcome> {
    let d = &cfg.detect;
    let child = d
        .child
        .as_deref()
        .ok_or_else(|| CliError::Config("no child given (use --child)".into()))?;
    let zoo = load_zoo(cfg)?;
    let method = parse_method(&d.method, &[d.alpha], std::slice::from_ref(&d.tap))?;
    let extra = if d.include_self {
        vec![child.to_string()]
    } else {
        Vec::new()
    };
    let dist = detect_child(&zoo, &method, &cfg.eval_config(), child, &extra)?;
    let mut table = format!("{child} ({method}, α = {}, tap {})\n", d.alpha, d.tap);
    for (rank, i) in dist.ranking().into_iter().enumerate() {
        let _ = writeln!(
            table,
            "{:>3}  {:<12} P = {:.6}  score = {:.6e}",
            rank + 1,
            dist.parent_ids[i],
            dist.probabilities[i],
            dist.scores[i]
        );
    }
    print!("{table}");
    let mut warnings = Vec::new();
    if dist.tied.len() > 1 {
        warnings.push(format!(
            "top score shared by {} candidates",
            dist.tied.len()
        ));
    }
    let out = match &cfg.out {
        Some(dest) => {
            let stage = Staged::new(dest)?;
            let report = json!({
                "child": child,
                "method": method.to_string(),
                "alpha": d.alpha,
                "tap": d.tap,
                "distribution": dist,
            });
            stage.write(
                "detect.json",
                format!(
                    "{}\n",
                    serde_json::to_string_pretty(&report).expect("serializes")
                ),
            )?;
            stage.write("config.json", resolved("detect", cfg))?;
            Some(stage.commit()?)
        }
        None => None,
    };
    Ok(Outcome { out, warnings })
}

/// One line of `summary.csv` / `summary.json`; `None` cells are `n/a`.
#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    method: String,
    accuracy: Option<f64>,
    validation_accuracy: Option<f64>,
    alpha: Option<f64>,
    tap: Option<String>,
    n_validation: Option<usize>,
    n_test: Option<usize>,
    excluded: Option<usize>,
    note: Option<String>,
}

fn cell<T: ToString>(v: &Option<T>) -> String {
    v.as_ref()
        .map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

fn unavailable(e: &MatchError) -> bool {
    matches!(
        e,
        MatchError::Core(
            lineage_core::Error::OverBudget { .. } | lineage_core::Error::OracleUnavailable(_)
        )
    )
}

pub fn eval(cfg: &RunConfig) -> Result<Outcome> {
    if cfg.methods.list.is_empty() {
        return Err(CliError::Config(
            "nothing to evaluate: the method list is empty".into(),
        ));
    }
    let methods = cfg
        .methods
        .list
        .iter()
        .map(|m| parse_method(m, &cfg.methods.alphas, &cfg.methods.taps))
        .collect::<Result<Vec<_>>>()?;
    let scatter_kind = match &cfg.eval.scatter {
        Some(s) => Some(
            MetricKind::from_str(&s.kind).map_err(|e| CliError::Config(format!("scatter: {e}")))?,
        ),
        None => None,
    };
    let dest = cfg.out_path()?.to_path_buf();
    let stage = Staged::new(&dest)?;
    let zoo = load_zoo(cfg)?;
    let ecfg = cfg.eval_config();
    let mut warnings = Vec::new();
    let mut reports: Vec<EvalReport> = Vec::new();
    let mut rows = Vec::new();
    for m in &methods {
        match evaluate_zoo(&zoo, m, &ecfg) {
            Ok(r) => {
                if !r.excluded.is_empty() {
                    warnings.push(format!(
                        "{}: {} descendants have no candidate ancestor",
                        r.method,
                        r.excluded.len()
                    ));
                }
                rows.push(SummaryRow {
                    method: r.method.clone(),
                    accuracy: Some(r.accuracy),
                    validation_accuracy: r.validation_accuracy,
                    alpha: Some(r.alpha),
                    tap: Some(r.tap.clone()),
                    n_validation: Some(r.n_validation),
                    n_test: Some(r.n_test),
                    excluded: Some(r.excluded.len()),
                    note: None,
                });
                reports.push(r);
            }
            Err(e) if unavailable(&e) => {
                warnings.push(format!("{m}: {e}"));
                rows.push(SummaryRow {
                    method: m.to_string(),
                    accuracy: None,
                    validation_accuracy: None,
                    alpha: None,
                    tap: None,
                    n_validation: None,
                    n_test: None,
                    excluded: None,
                    note: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut csv = format!("{SUMMARY_CSV_HEADER}\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.method,
            cell(&r.accuracy),
            cell(&r.validation_accuracy),
            cell(&r.alpha),
            cell(&r.tap),
            cell(&r.n_validation),
            cell(&r.n_test),
            cell(&r.excluded)
        );
        println!(
            "{:<16} accuracy {}",
            r.method,
            cell(&r.accuracy.map(|a| format!("{a:.4}")))
        );
    }
    stage.write("summary.csv", csv)?;
    let mut summary = serde_json::to_string_pretty(&rows).expect("serializes");
    summary.push('\n');
    stage.write("summary.json", summary)?;
    let mut pairs = Vec::new();
    write_pairs_csv(&reports, &mut pairs).expect("writing to memory");
    stage.write("pairs.csv", pairs)?;

    if cfg.eval.gap_matrix {
        let mut csv = format!("{GAP_CSV_HEADER}\n");
        for m in &methods {
            match gap_matrix(&zoo, m, &ecfg) {
                Ok(cells) => {
                    for c in cells {
                        let _ = writeln!(
                            csv,
                            "{m},{},{},{},{},{},{},{}",
                            c.ancestor_generation,
                            c.descendant_generation,
                            c.gap(),
                            c.accuracy,
                            c.n_test,
                            c.alpha,
                            c.tap
                        );
                    }
                }
                Err(e) if unavailable(&e) => {
                    warnings.push(format!("{m} gap matrix: {e}"));
                    let _ = writeln!(csv, "{m},n/a,n/a,n/a,n/a,n/a,n/a,n/a");
                }
                Err(e) => return Err(e.into()),
            }
        }
        stage.write("gap.csv", csv)?;
    }

    if let (Some(s), Some(kind)) = (&cfg.eval.scatter, scatter_kind) {
        let rows = scatter(&zoo, kind, s.alpha, &s.tap, &ecfg)?;
        let mut csv = format!("{SCATTER_CSV_HEADER}\n");
        for r in &rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.parent_id,
                r.child_id,
                r.is_parent,
                r.baseline,
                r.approx,
                cell(&r.oracle)
            );
        }
        stage.write("scatter.csv", csv)?;
        let (o, a): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter_map(|r| r.oracle.map(|o| (o, r.approx)))
            .unzip();
        if o.len() < rows.len() {
            warnings.push(format!(
                "scatter: oracle n/a for {} of {} pairs",
                rows.len() - o.len(),
                rows.len()
            ));
        }
        if o.len() >= 2 {
            println!(
                "scatter: pearson r(oracle, approx) = {:.6} over {} pairs",
                pearson(&o, &a),
                o.len()
            );
        }
    }
    stage.write("config.json", resolved("eval", cfg))?;
    let out = stage.commit()?;
    Ok(Outcome {
        out: Some(out),
        warnings,
    })
}

pub fn train_detector(cfg: &RunConfig) -> Result<Outcome> {
    let d = &cfg.detector;
    let dest = cfg.out_path()?.to_path_buf();
    let stage = Staged::new(&dest)?;
    let zoo = load_zoo(cfg)?;
    let withhold = match d.withhold_parent.as_deref() {
        Some("auto") => vec![most_isolated_candidate(&zoo, cfg.eval.ancestor_generation)?],
        Some(id) => vec![id.to_string()],
        None => Vec::new(),
    };
    let scfg = SampleConfig {
        ancestor_generation: cfg.eval.ancestor_generation,
        descendant_generation: cfg.eval.descendant_generation,
        withhold: withhold.clone(),
        no_parent: d.no_parent,
        planes: PlaneSpec {
            weight_block: d.weight_block.clone(),
            feature_tap: d.feature_tap.clone(),
            samples: d.samples,
            probe_seed: cfg.seed,
            ..PlaneSpec::default()
        },
    };
    let (samples, dropped) = build_samples(&zoo, &scfg)?;
    let split = DetectorSplit::stratified(&samples, cfg.seed)?;
    let tcfg = TrainConfig {
        epochs: d.epochs,
        lr: d.lr,
        batch: d.batch,
        seed: cfg.seed,
    };
    let dcfg = DetectorConfig {
        use_weights: d.use_weights,
        use_features: d.use_features,
        no_parent: d.no_parent,
        ..DetectorConfig::default()
    };
    let mut state = match &d.resume {
        Some(dir) => {
            let state = load_train_state(dir)?;
            if state.config != dcfg {
                return Err(CliError::Config(format!(
                    "checkpoint in {} was trained with a different detector configuration",
                    dir.display()
                )));
            }
            if state.epoch > d.epochs {
                return Err(CliError::Config(format!(
                    "checkpoint is at epoch {}, beyond the requested {} epochs",
                    state.epoch, d.epochs
                )));
            }
            state
        }
        None => TrainState::start(
            DetectorParams::init(dcfg, cfg.seed)?,
            &samples,
            &split,
            &tcfg,
        )?,
    };
    state.run(&samples, &split, &tcfg)?;
    let trained = state.finish()?;
    let (test_loss, test_accuracy) = evaluate(&trained.params, &samples, &split.test)?;
    let recall = if d.no_parent {
        no_parent_recall(&trained.params, &samples, &split.test)?
    } else {
        None
    };
    let m = samples.first().map_or(0, |s| s.candidates.len());

    save_detector(&trained.params, &stage.path().join("detector"))?;
    save_train_state(&state, &stage.path().join("checkpoint"))?;
    stage.write("train_log.csv", trained.log_csv())?;
    let mut csv = format!("{PREDICTIONS_CSV_HEADER}\n");
    for &i in &split.test {
        let s = &samples[i];
        let p = predict(&trained.params, s)?;
        let name = |k: usize| {
            s.candidates
                .get(k)
                .map_or("none", String::as_str)
                .to_string()
        };
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            s.child_id,
            name(s.label),
            name(p),
            p == s.label
        );
    }
    stage.write("test_predictions.csv", csv)?;
    let report = json!({
        "candidates": m,
        "withheld": withhold,
        "dropped": dropped.len(),
        "n_train": split.train.len(),
        "n_validation": split.validation.len(),
        "n_test": split.test.len(),
        "epochs": d.epochs,
        "best_epoch": trained.best_epoch,
        "validation_accuracy": state.best_val_accuracy,
        "test_loss": test_loss,
        "test_accuracy": test_accuracy,
        "no_parent_recall": recall,
    });
    stage.write(
        "report.json",
        format!(
            "{}\n",
            serde_json::to_string_pretty(&report).expect("serializes")
        ),
    )?;
    stage.write("config.json", resolved("train-detector", cfg))?;
    let out = stage.commit()?;
    println!(
        "detector: best epoch {} of {}, test accuracy {test_accuracy:.4} over {} children ({m} candidates)",
        trained.best_epoch,
        d.epochs,
        split.test.len()
    );
    if let Some(r) = recall {
        println!("no-parent recall {r:.4}");
    }
    let mut warnings = Vec::new();
    if !dropped.is_empty() {
        warnings.push(format!(
            "{} descendants dropped: their ancestor is not a candidate",
            dropped.len()
        ));
    }
    if d.no_parent && recall.is_none() {
        warnings.push(
            "no-parent mode but the test split holds no descendant without a candidate parent"
                .into(),
        );
    }
    Ok(Outcome {
        out: Some(out),
        warnings,
    })
}
