use lineage_core::similarity::MetricKind;
use lineage_core::Activation;
use lineage_matcher::*;
use lineage_zoo::{build_zoo, Grid, RegularizerSpec, TaskSpec, Zoo, ZooConfig};
use proptest::prelude::*;

fn tiny_zoo(seed: u64, child_iterations: &[usize], generations: usize) -> Zoo {
    let cfg = ZooConfig {
        seed,
        hidden: vec![24, 16],
        activation: Activation::Relu,
        source: TaskSpec::blobs("source", seed * 7 + 1, 4, 8, 1.5),
        chain: (0..generations)
            .map(|g| TaskSpec::blobs("target", seed * 7 + 2 + g as u64, 6, 8, 1.2))
            .collect(),
        parents: 4,
        // One seed index: every parent starts from the same initialization.
        parent_grid: Grid {
            lrs: vec![1e-2, 3e-3],
            batches: vec![32, 128],
            iterations: vec![150],
            seeds: 1,
        },
        child_grid: Grid {
            lrs: vec![1e-2, 1e-3],
            batches: vec![32],
            iterations: child_iterations.to_vec(),
            seeds: 2,
        },
        accuracy_floor: 0.5,
        regularizer: RegularizerSpec::None,
    };
    build_zoo(&cfg).unwrap().zoo
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("p{i}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_ignores_a_common_shift(scores in prop::collection::vec(-50.0f64..50.0, 1..8), c in -1e3f64..1e3) {
        let a = match_parents(ids(scores.len()), scores.clone()).unwrap();
        let b = match_parents(ids(scores.len()), scores.iter().map(|s| s + c).collect()).unwrap();
        for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert_eq!(a.prediction, b.prediction);
    }

    #[test]
    fn probabilities_stay_normalized_for_huge_scores(scores in prop::collection::vec(-1e6f64..1e6, 1..8)) {
        let d = match_parents(ids(scores.len()), scores).unwrap();
        prop_assert!(d.probabilities.iter().all(|p| p.is_finite() && *p >= 0.0));
        prop_assert!((d.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_survives_monotone_transforms(scores in prop::collection::vec(-5.0f64..5.0, 1..8)) {
        let a = match_parents(ids(scores.len()), scores.clone()).unwrap();
        let b = match_parents(ids(scores.len()), scores.iter().map(|s| s.powi(3) + 2.0 * s).collect()).unwrap();
        prop_assert_eq!(a.prediction, b.prediction);
        prop_assert_eq!(a.ranking(), b.ranking());
    }
}

#[test]
fn evaluation_is_deterministic_and_accounts_for_every_child() {
    let zoo = tiny_zoo(0, &[100], 1);
    let cfg = EvalConfig {
        samples: 32,
        ..EvalConfig::default()
    };
    let a = evaluate_zoo(&zoo, &"l2+approx".parse().unwrap(), &cfg).unwrap();
    let b = evaluate_zoo(&zoo, &"l2+approx".parse().unwrap(), &cfg).unwrap();
    assert_eq!(a, b);
    let children = zoo
        .manifest
        .records
        .iter()
        .filter(|r| r.generation == 2)
        .count();
    assert_eq!(a.n_validation + a.n_test, children);
    assert!(a.excluded.is_empty());
    assert_eq!(a.pairs.len(), children);
    assert!(!a.single_candidate);
    assert!(cfg.validation_fraction > 0.0 && a.validation_accuracy.is_some());
    assert!([0.001, 0.01, 0.1].contains(&a.alpha));
}

#[test]
fn withheld_parents_exclude_their_children() {
    let zoo = tiny_zoo(1, &[100], 1);
    let gone = zoo.manifest.records[0].id.clone();
    let cfg = EvalConfig {
        samples: 32,
        withhold: vec![gone.clone()],
        ..EvalConfig::default()
    };
    let r = evaluate_zoo(&zoo, &Method::baseline(MetricKind::L2), &cfg).unwrap();
    let orphans: Vec<String> = zoo
        .manifest
        .records
        .iter()
        .filter(|x| x.parent_id.as_deref() == Some(&gone))
        .map(|x| x.id.clone())
        .collect();
    assert!(!orphans.is_empty());
    assert_eq!(r.excluded, orphans);
    let children = zoo
        .manifest
        .records
        .iter()
        .filter(|x| x.generation == 2)
        .count();
    assert_eq!(r.n_validation + r.n_test + r.excluded.len(), children);
    assert!(!r.candidates.contains(&gone));
}

#[test]
fn a_single_candidate_is_flagged() {
    let zoo = tiny_zoo(2, &[100], 1);
    let roots: Vec<String> = zoo
        .manifest
        .records
        .iter()
        .filter(|r| r.generation == 1)
        .map(|r| r.id.clone())
        .collect();
    let cfg = EvalConfig {
        samples: 16,
        withhold: roots[1..].to_vec(),
        ..EvalConfig::default()
    };
    let r = evaluate_zoo(&zoo, &Method::baseline(MetricKind::L1), &cfg).unwrap();
    assert!(r.single_candidate);
    assert_eq!(r.accuracy, 1.0);
}

#[test]
fn random_scores_match_chance_within_a_binomial_interval() {
    let zoo = tiny_zoo(3, &[100], 1);
    let m = zoo
        .manifest
        .records
        .iter()
        .filter(|r| r.generation == 1)
        .count() as f64;
    let (mut hits, mut n) = (0.0, 0usize);
    for split_seed in 0..40 {
        let cfg = EvalConfig {
            samples: 8,
            split_seed,
            validation_fraction: 0.0,
            ..EvalConfig::default()
        };
        let r = evaluate_zoo(&zoo, &Method::random(), &cfg).unwrap();
        hits += r.accuracy * r.n_test as f64;
        n += r.n_test;
    }
    let p = 1.0 / m;
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    let acc = hits / n as f64;
    assert!(
        (acc - p).abs() < 3.0 * sd,
        "random accuracy {acc} vs chance {p} ± {sd}"
    );
}

#[test]
fn empty_method_list_yields_no_reports() {
    let zoo = tiny_zoo(0, &[100], 1);
    assert!(evaluate_methods(&zoo, &[], &EvalConfig::default())
        .unwrap()
        .is_empty());
    assert!(sweep(&zoo, Axis::Lr, None, &[], &EvalConfig::default())
        .unwrap()
        .is_empty());
}

#[test]
fn sweep_over_a_single_value_equals_the_plain_evaluation() {
    let zoo = tiny_zoo(0, &[100], 1);
    let cfg = EvalConfig {
        samples: 32,
        ..EvalConfig::default()
    };
    let method = Method::baseline(MetricKind::L2);
    let points = sweep(
        &zoo,
        Axis::Iterations,
        None,
        std::slice::from_ref(&method),
        &cfg,
    )
    .unwrap();
    assert_eq!(points.len(), 1);
    let plain = evaluate_zoo(&zoo, &method, &cfg).unwrap();
    assert_eq!(points[0].report.accuracy, plain.accuracy);
    assert_eq!(points[0].report.pairs, plain.pairs);
    let err = sweep(&zoo, Axis::Iterations, Some(&[123.0]), &[method], &cfg).unwrap_err();
    assert!(matches!(err, MatchError::Config(_)), "{err}");
}

#[test]
fn longer_fine_tuning_is_not_easier_to_trace() {
    let zoo = tiny_zoo(4, &[50, 200, 800], 1);
    let cfg = EvalConfig {
        samples: 32,
        validation_fraction: 0.0,
        ..EvalConfig::default()
    };
    let points = sweep(
        &zoo,
        Axis::Iterations,
        None,
        &[Method::baseline(MetricKind::L2)],
        &cfg,
    )
    .unwrap();
    let x: Vec<f64> = points.iter().map(|p| p.value).collect();
    let y: Vec<f64> = points.iter().map(|p| p.report.accuracy).collect();
    assert_eq!(x, vec![50.0, 200.0, 800.0]);
    let rho = spearman(&x, &y);
    // A constant accuracy profile has no rank correlation and no upward trend.
    assert!(
        rho <= 0.0 || y.iter().all(|&a| a == y[0]),
        "accuracies {y:?}"
    );
    eprintln!("accuracy by iterations {y:?}, spearman {rho}");
}

#[test]
fn gap_matrix_covers_the_upper_triangle() {
    let zoo = tiny_zoo(5, &[100], 2);
    let cells = gap_matrix(
        &zoo,
        &Method::baseline(MetricKind::L1),
        &EvalConfig {
            samples: 16,
            ..EvalConfig::default()
        },
    )
    .unwrap();
    let pairs: Vec<(u32, u32)> = cells
        .iter()
        .map(|c| (c.ancestor_generation, c.descendant_generation))
        .collect();
    assert_eq!(pairs, vec![(1, 2), (1, 3), (2, 3)]);
    assert!(cells
        .iter()
        .all(|c| (0.0..=1.0).contains(&c.accuracy) && c.n_test > 0));
}

#[test]
fn reports_render_as_csv_and_summary() {
    let zoo = tiny_zoo(0, &[100], 1);
    let cfg = EvalConfig {
        samples: 16,
        ..EvalConfig::default()
    };
    let reports = evaluate_methods(
        &zoo,
        &["l2".parse().unwrap(), "cka+approx".parse().unwrap()],
        &cfg,
    )
    .unwrap();
    let mut buf = Vec::new();
    write_pairs_csv(&reports, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], PAIRS_CSV_HEADER);
    let cols = PAIRS_CSV_HEADER.split(',').count();
    assert!(lines[1..].iter().all(|l| l.split(',').count() == cols));
    assert_eq!(
        lines.len() - 1,
        reports.iter().map(|r| r.pairs.len()).sum::<usize>()
    );
    let summary = summarize(&[reports[0].clone(), reports[1].clone(), reports[0].clone()]);
    assert_eq!(summary.len(), 2);
    assert_eq!(summary[0].method, "l2");
    assert_eq!(summary[0].accuracies.len(), 2);
    assert_eq!(summary[0].std, 0.0);
    let json: serde_json::Value = serde_json::from_str(&summary_json(&reports)).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 2);
}

#[test]
fn scatter_marks_oracle_cells_over_budget() {
    let zoo = tiny_zoo(0, &[100], 1);
    let cfg = EvalConfig {
        samples: 8,
        ..EvalConfig::default()
    };
    let rows = scatter(&zoo, MetricKind::L2, 0.01, "act1", &cfg).unwrap();
    let m = zoo
        .manifest
        .records
        .iter()
        .filter(|r| r.generation == 1)
        .count();
    let n = zoo
        .manifest
        .records
        .iter()
        .filter(|r| r.generation == 2)
        .count();
    assert_eq!(rows.len(), m * n);
    assert_eq!(rows.iter().filter(|r| r.is_parent).count(), n);
    for r in &rows {
        let o = r.oracle.unwrap();
        assert!((o - r.approx).abs() <= 1e-2 * (1.0 + o.abs()), "{r:?}");
    }
    let tight = EvalConfig {
        oracle_budget: 10,
        ..cfg
    };
    assert!(scatter(&zoo, MetricKind::L2, 0.01, "act1", &tight)
        .unwrap()
        .iter()
        .all(|r| r.oracle.is_none()));
}

#[test]
fn bad_configurations_are_rejected() {
    let zoo = tiny_zoo(0, &[100], 1);
    let bad = [
        EvalConfig {
            descendant_generation: 1,
            ..EvalConfig::default()
        },
        EvalConfig {
            samples: 0,
            ..EvalConfig::default()
        },
        EvalConfig {
            validation_fraction: 1.0,
            ..EvalConfig::default()
        },
        EvalConfig {
            ancestor_generation: 2,
            descendant_generation: 3,
            ..EvalConfig::default()
        },
        EvalConfig {
            children: Some(vec!["nobody".into()]),
            ..EvalConfig::default()
        },
    ];
    for cfg in bad {
        assert!(
            evaluate_zoo(&zoo, &Method::baseline(MetricKind::L2), &cfg).is_err(),
            "{cfg:?}"
        );
    }
    assert!(evaluate_zoo(
        &zoo,
        &Method::approx(MetricKind::Linf),
        &EvalConfig::default()
    )
    .is_err());
}
