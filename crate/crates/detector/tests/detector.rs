use lineage_core::gradcheck::{central_difference, vector_relative_error, FD_STEP};
use lineage_core::Tensor;
use lineage_detector::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> DetectorConfig {
    DetectorConfig {
        d_model: 8,
        heads: 2,
        ff_width: 16,
        ..DetectorConfig::default()
    }
}

fn planes(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    Tensor::new(
        vec![2, h, w],
        (0..2 * h * w)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn random_input(rng: &mut ChaCha8Rng) -> StackedInput {
    StackedInput {
        weights: Some(planes(rng, 4, 5)),
        features: Some(planes(rng, 3, 3)),
    }
}

fn random_sample(rng: &mut ChaCha8Rng, m: usize, label: usize) -> DetectorSample {
    DetectorSample {
        child_id: "child".into(),
        candidates: (0..m).map(|i| format!("p{i}")).collect(),
        inputs: (0..m).map(|_| random_input(rng)).collect(),
        label,
    }
}

/// Initialization with every block (including norm gains and `s′`) moved off
/// its symmetric starting value.
fn jittered(config: DetectorConfig, seed: u64) -> DetectorParams {
    let mut p = DetectorParams::init(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    p.values
        .values_mut()
        .iter_mut()
        .for_each(|v| *v += rng.random_range(-0.2..0.2));
    p
}

#[test]
fn planes_fill_row_major() {
    let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let p = reshape_to_planes(&v, PlaneShape { h: 2, w: 3 }, false).unwrap();
    assert_eq!(p.values.shape(), &[2, 3]);
    assert_eq!(p.values.row(0), &[1.0, 2.0, 3.0]);
    assert_eq!(p.values.row(1), &[4.0, 5.0, 6.0]);
    assert_eq!(p.flatten(), v);
    assert_eq!(p.padded(), 0);
}

#[test]
fn padding_is_recorded_and_optional() {
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    let p = reshape_to_planes(&v, PlaneShape { h: 2, w: 3 }, true).unwrap();
    assert_eq!(p.values.get(1, 2), 0.0);
    assert_eq!(p.pad_mask, vec![false, false, false, false, false, true]);
    assert_eq!(p.flatten(), v);
    assert!(matches!(
        reshape_to_planes(&v, PlaneShape { h: 2, w: 3 }, false),
        Err(DetectorError::Contract(_))
    ));
    assert!(matches!(
        reshape_to_planes(&v, PlaneShape { h: 2, w: 2 }, true),
        Err(DetectorError::Contract(_))
    ));
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for case in 0..24u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let no_parent = case % 2 == 1;
        let m = 2 + (case as usize % 3);
        let config = DetectorConfig {
            no_parent,
            use_weights: case % 6 != 4,
            use_features: case % 6 != 2,
            ..small_config()
        };
        let params = jittered(config, case);
        let label = rng.random_range(0..m + usize::from(no_parent));
        let sample = random_sample(&mut rng, m, label);
        let (_, analytic) = sample_loss_grad(&params, &sample).unwrap();
        let samples = [sample];
        let numeric = central_difference(&params.values, FD_STEP, |v| {
            let p = DetectorParams {
                config: params.config.clone(),
                values: v.clone(),
            };
            evaluate(&p, &samples, &[0]).unwrap().0
        });
        let err = vector_relative_error(analytic.values(), numeric.values());
        assert!(err < 1e-5, "case {case}: rel err {err:e}");
        for (i, b) in params.values.layout().blocks().iter().enumerate() {
            let e = vector_relative_error(analytic.block_values(i), numeric.block_values(i));
            assert!(e < 1e-5, "case {case} block {}: rel err {e:e}", b.name);
        }
        worst = worst.max(err);
    }
    eprintln!("worst detector gradient error {worst:e}");
}

#[test]
fn zero_head_scores_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut p = DetectorParams::init(small_config(), 3).unwrap();
    p.block_mut("head.weight").unwrap().fill(0.0);
    p.block_mut("head.bias").unwrap().fill(0.0);
    for _ in 0..5 {
        assert_eq!(detector_forward(&p, &random_input(&mut rng)).unwrap(), 0.0);
    }
}

#[test]
fn swapping_modalities_with_their_encoders_keeps_the_score() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = jittered(small_config(), 4);
    let mut swapped = p.clone();
    for b in p.values.layout().blocks() {
        if let Some(rest) = b.name.strip_prefix("weight_enc.") {
            let other = format!("feature_enc.{rest}");
            swapped
                .block_mut(&b.name)
                .unwrap()
                .copy_from_slice(p.block(&other).unwrap());
            swapped
                .block_mut(&other)
                .unwrap()
                .copy_from_slice(p.block(&b.name).unwrap());
        }
    }
    for _ in 0..5 {
        let x = StackedInput {
            weights: Some(planes(&mut rng, 4, 4)),
            features: Some(planes(&mut rng, 4, 4)),
        };
        let y = StackedInput {
            weights: x.features.clone(),
            features: x.weights.clone(),
        };
        let (a, b) = (
            detector_forward(&p, &x).unwrap(),
            detector_forward(&swapped, &y).unwrap(),
        );
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn single_modality_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_input(&mut rng);
    for (w, f) in [(true, false), (false, true)] {
        let p = DetectorParams::init(
            DetectorConfig {
                use_weights: w,
                use_features: f,
                ..small_config()
            },
            0,
        )
        .unwrap();
        let only = StackedInput {
            weights: x.weights.clone().filter(|_| w),
            features: x.features.clone().filter(|_| f),
        };
        assert_eq!(
            detector_forward(&p, &only).unwrap(),
            detector_forward(&p, &x).unwrap()
        );
    }
    let none = DetectorConfig {
        use_weights: false,
        use_features: false,
        ..small_config()
    };
    assert!(matches!(
        DetectorParams::init(none, 0),
        Err(DetectorError::Contract(_))
    ));
    let p = DetectorParams::init(small_config(), 0).unwrap();
    let missing = StackedInput {
        weights: None,
        features: x.features.clone(),
    };
    assert!(detector_forward(&p, &missing).is_err());
    let bad = StackedInput {
        weights: Some(Tensor::zeros(&[3, 2, 2])),
        features: x.features.clone(),
    };
    assert!(detector_forward(&p, &bad).is_err());
    let sample = random_sample(&mut rng, 3, 3);
    assert!(sample_loss_grad(&p, &sample).is_err());
}

#[test]
fn permuting_candidates_permutes_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = jittered(small_config(), 5);
    let s = random_sample(&mut rng, 4, 1);
    let perm = [2, 0, 3, 1];
    let t = DetectorSample {
        inputs: perm.iter().map(|&i| s.inputs[i].clone()).collect(),
        candidates: perm.iter().map(|&i| s.candidates[i].clone()).collect(),
        ..s.clone()
    };
    let (a, b) = (
        candidate_scores(&p, &s).unwrap(),
        candidate_scores(&p, &t).unwrap(),
    );
    for (j, &i) in perm.iter().enumerate() {
        assert_eq!(b[j], a[i]);
    }
}

#[test]
fn initial_loss_is_near_log_m() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for m in [2usize, 4, 6] {
        let samples: Vec<_> = (0..20).map(|i| random_sample(&mut rng, m, i % m)).collect();
        let idx: Vec<usize> = (0..samples.len()).collect();
        let p = DetectorParams::init(small_config(), m as u64).unwrap();
        let (loss, _) = evaluate(&p, &samples, &idx).unwrap();
        let ln_m = (m as f64).ln();
        assert!(
            (loss - ln_m).abs() <= 0.1 * ln_m,
            "M={m}: loss {loss} vs ln M {ln_m}"
        );
    }
}

#[test]
fn training_fits_a_single_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let samples = vec![random_sample(&mut rng, 2, 1)];
    let split = DetectorSplit {
        train: vec![0],
        validation: vec![0],
        test: vec![0],
    };
    let init = DetectorParams::init(small_config(), 7).unwrap();
    let out = train_detector(
        init,
        &samples,
        &split,
        &TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(out.log.len(), 51);
    let last = out.log.last().unwrap();
    assert!(
        last.train_loss < 2f64.ln() && last.val_loss < 0.05,
        "{last:?}"
    );
    assert_eq!(evaluate(&out.params, &samples, &[0]).unwrap().1, 1.0);
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let samples: Vec<_> = (0..10).map(|i| random_sample(&mut rng, 3, i % 3)).collect();
    let split = DetectorSplit {
        train: (0..7).collect(),
        validation: vec![7],
        test: vec![8, 9],
    };
    let run = || {
        let init = DetectorParams::init(small_config(), 9).unwrap();
        train_detector(
            init,
            &samples,
            &split,
            &TrainConfig {
                epochs: 3,
                batch: 2,
                seed: 4,
                ..TrainConfig::default()
            },
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log_csv(), b.log_csv());
    assert_eq!(a.params, b.params);
    assert!(a.log_csv().starts_with(LOG_CSV_HEADER));
}

#[test]
fn no_parent_prediction() {
    let mut p = DetectorParams::init(
        DetectorConfig {
            no_parent: true,
            ..small_config()
        },
        0,
    )
    .unwrap();
    p.block_mut("no_parent").unwrap()[0] = 10.0;
    assert_eq!(predict_no_parent(&p, &[-100.0, -100.5, -99.0]).unwrap(), 3);
    p.block_mut("no_parent").unwrap()[0] = -10.0;
    let scores = [0.3, 2.5, -1.0, 0.7];
    let z = no_parent_logits(&scores, 0.0);
    let top = |v: &[f64]| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
    assert_eq!(top(&z[..4]), top(&scores));
    assert!((z[..4].iter().sum::<f64>()).abs() < 1e-12);
    assert_eq!(predict_no_parent(&p, &scores).unwrap(), 1);
    let plain = DetectorParams::init(small_config(), 0).unwrap();
    assert!(matches!(
        predict_no_parent(&plain, &scores),
        Err(DetectorError::Contract(_))
    ));
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = jittered(
        DetectorConfig {
            no_parent: true,
            ..small_config()
        },
        11,
    );
    save_detector(&p, dir.path()).unwrap();
    assert_eq!(load_detector(dir.path()).unwrap(), p);
    let blob = dir.path().join("detector.f64");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(
        load_detector(dir.path()),
        Err(DetectorError::Format { .. })
    ));
    std::fs::write(dir.path().join("detector.json"), "{}").unwrap();
    assert!(matches!(
        load_detector(dir.path()),
        Err(DetectorError::Format { .. })
    ));
}

#[test]
fn shuffled_labels_stay_at_chance() {
    // Labels carry no information about the inputs, so held-out accuracy
    // should sit inside a 99% binomial interval around 1/M.
    let (m, n) = (3usize, 120usize);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut samples: Vec<_> = (0..n).map(|i| random_sample(&mut rng, m, i % m)).collect();
    let mut labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    samples
        .iter_mut()
        .zip(labels)
        .for_each(|(s, l)| s.label = l);
    let split = DetectorSplit::stratified(&samples, 3).unwrap();
    let init = DetectorParams::init(small_config(), 13).unwrap();
    let out = train_detector(
        init,
        &samples,
        &split,
        &TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let (_, acc) = evaluate(&out.params, &samples, &split.test).unwrap();
    let p = 1.0 / m as f64;
    let sd = (p * (1.0 - p) / split.test.len() as f64).sqrt();
    assert!(
        (acc - p).abs() <= 2.576 * sd,
        "accuracy {acc} on {} test samples",
        split.test.len()
    );
}

#[test]
fn split_rejects_empty_partitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let samples: Vec<_> = (0..2).map(|_| random_sample(&mut rng, 2, 0)).collect();
    assert!(matches!(
        DetectorSplit::stratified(&samples, 0),
        Err(DetectorError::Config(_))
    ));
    let samples: Vec<_> = (0..20).map(|i| random_sample(&mut rng, 2, i % 2)).collect();
    let split = DetectorSplit::stratified(&samples, 0).unwrap();
    assert_eq!(
        (split.train.len(), split.validation.len(), split.test.len()),
        (14, 2, 4)
    );
    let empty = DetectorSplit {
        validation: vec![],
        ..split
    };
    let init = DetectorParams::init(small_config(), 0).unwrap();
    assert!(matches!(
        train_detector(init, &samples, &empty, &TrainConfig::default()),
        Err(DetectorError::Config(_))
    ));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let samples: Vec<_> = (0..10).map(|i| random_sample(&mut rng, 3, i % 3)).collect();
    let split = DetectorSplit {
        train: (0..7).collect(),
        validation: vec![7],
        test: vec![8, 9],
    };
    let init = DetectorParams::init(small_config(), 16).unwrap();
    let full = TrainConfig {
        epochs: 4,
        seed: 2,
        ..TrainConfig::default()
    };
    let straight = train_detector(init.clone(), &samples, &split, &full).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut state = TrainState::start(init, &samples, &split, &full).unwrap();
    state
        .run(
            &samples,
            &split,
            &TrainConfig {
                epochs: 2,
                ..full.clone()
            },
        )
        .unwrap();
    save_train_state(&state, dir.path()).unwrap();
    let mut resumed = load_train_state(dir.path()).unwrap();
    assert_eq!(resumed, state);
    resumed.run(&samples, &split, &full).unwrap();
    assert_eq!(resumed.finish().unwrap(), straight);

    std::fs::write(
        dir.path().join("train_state.json"),
        "{\"format_version\": 9}",
    )
    .unwrap();
    assert!(matches!(
        load_train_state(dir.path()),
        Err(DetectorError::Format { .. })
    ));
}
