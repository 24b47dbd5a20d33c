mod support;

use lineage_core::network::{features, DEFAULT_JACOBIAN_BUDGET};
use lineage_core::similarity::{
    aligned_delta, approx_similarity, baseline_similarity, linearized_outputs, oracle_similarity,
    pi_weights, solve_map_w, solve_shift_z, MetricKind,
};
use lineage_core::tape::count_backward_passes;
use lineage_core::{Activation, ArchSpec, Error, ParamVector, Tensor};
use nalgebra::DMatrix;
use rand::Rng;
use support::{explicit_contraction, random_inputs, rng, Pair};

fn kinds() -> Vec<MetricKind> {
    MetricKind::linearizable().to_vec()
}

fn random_tap(r: &mut impl Rng, arch: &ArchSpec) -> String {
    let taps = arch.tap_names();
    taps[r.random_range(0..taps.len())].clone()
}

#[test]
fn one_pass_score_equals_explicit_jacobian_contraction() {
    let mut r = rng(10);
    let mut worst = 0.0f64;
    for _ in 0..60 {
        let pair = Pair::random(&mut r, 0.2);
        let n = r.random_range(3..=8);
        let x = random_inputs(&mut r, n, pair.arch.input_dim());
        let tap = random_tap(&mut r, &pair.arch);
        let alpha = [0.001, 0.01, 0.1, 1.0][r.random_range(0..4)];
        let xp = features(&pair.arch, &pair.parent, &x, &tap).unwrap();
        let yc = features(&pair.arch, &pair.child, &x, &tap).unwrap();
        let delta = aligned_delta(pair.parent(), pair.child(), &tap).unwrap();
        for kind in kinds() {
            let got =
                approx_similarity(kind, pair.parent(), pair.child(), &x, &tap, alpha).unwrap();
            let base = baseline_similarity(kind, &xp, &yc).unwrap();
            let pi = pi_weights(kind, &xp, &yc).unwrap();
            let g = explicit_contraction(&pair.arch, &pair.parent, &x, &pi.rows, &tap);
            let lin: f64 = g
                .iter()
                .zip(delta.values())
                .map(|(a, b)| a * alpha * b)
                .sum();
            let expect = base + pi.prefactor * lin;
            let diff = (got.score - expect).abs();
            worst = worst.max(diff);
            assert!(diff < 1e-10, "{kind} tap {tap}: {diff:e}");
            assert_eq!(got.baseline, base);
        }
    }
    assert!(worst.is_finite());
}

#[test]
fn linear_term_is_the_derivative_of_the_oracle() {
    // d/dε s(X + ε·G, Y) at ε = 0, by central differences on the materialized outputs
    let mut r = rng(11);
    for _ in 0..20 {
        let pair = Pair::random(&mut r, 0.3);
        let x = random_inputs(&mut r, 6, pair.arch.input_dim());
        let tap = random_tap(&mut r, &pair.arch);
        let xp = features(&pair.arch, &pair.parent, &x, &tap).unwrap();
        let yc = features(&pair.arch, &pair.child, &x, &tap).unwrap();
        let delta = aligned_delta(pair.parent(), pair.child(), &tap).unwrap();
        let (g, _) = linearized_outputs(
            pair.parent(),
            &x,
            &tap,
            &delta,
            1.0,
            DEFAULT_JACOBIAN_BUDGET,
        )
        .unwrap();
        for kind in kinds() {
            let s =
                |eps: f64| baseline_similarity(kind, &xp.add(&g.scale(eps)).unwrap(), &yc).unwrap();
            let h = 1e-5;
            let numeric = (s(h) - s(-h)) / (2.0 * h);
            let a = approx_similarity(kind, pair.parent(), pair.child(), &x, &tap, 1.0).unwrap();
            let analytic = a.gain();
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(
                rel < 1e-4,
                "{kind} tap {tap}: numeric {numeric:e} analytic {analytic:e}"
            );
        }
    }
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

#[test]
fn smooth_kinds_have_second_order_error_and_first_order_gain() {
    let mut r = rng(12);
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let pair = Pair::with_arch(
        &mut r,
        ArchSpec {
            sizes: vec![4, 16, 8, 3],
            activation: Activation::Tanh,
        },
        0.3,
    );
    let x = random_inputs(&mut r, 20, 4);
    for kind in [
        MetricKind::L2,
        MetricKind::Lp(4.0),
        MetricKind::Lse(0.01),
        MetricKind::Cka,
        MetricKind::Dc,
    ] {
        let mut err = Vec::new();
        let mut gain = Vec::new();
        for &e in &eps {
            let o = oracle_similarity(
                kind,
                pair.parent(),
                pair.child(),
                &x,
                "act1",
                e,
                DEFAULT_JACOBIAN_BUDGET,
            )
            .unwrap();
            let a = approx_similarity(kind, pair.parent(), pair.child(), &x, "act1", e).unwrap();
            err.push((o.score - a.score).abs());
            gain.push((o.score - a.baseline).abs());
        }
        let se = slope(&eps, &err);
        let sg = slope(&eps, &gain);
        assert!(se >= 1.8, "{kind}: error slope {se}");
        assert!((sg - 1.0).abs() < 0.2, "{kind}: gain slope {sg}");
    }
}

#[test]
fn identical_models_score_their_baseline() {
    let mut r = rng(13);
    let pair = Pair::random(&mut r, 0.0);
    let x = random_inputs(&mut r, 5, pair.arch.input_dim());
    for kind in kinds() {
        let a = approx_similarity(kind, pair.parent(), pair.child(), &x, "act1", 0.1).unwrap();
        assert_eq!(a.score, a.baseline);
        let o = oracle_similarity(
            kind,
            pair.parent(),
            pair.child(),
            &x,
            "act1",
            0.1,
            DEFAULT_JACOBIAN_BUDGET,
        )
        .unwrap();
        assert_eq!(o.score, a.baseline);
    }
    let x0 = random_inputs(&mut r, 5, pair.arch.input_dim());
    let moved = Pair::with_arch(&mut r, pair.arch.clone(), 0.5);
    for kind in kinds() {
        let a = approx_similarity(kind, moved.parent(), moved.child(), &x0, "act1", 0.0).unwrap();
        assert_eq!(a.score, a.baseline);
    }
}

#[test]
fn invalid_alpha_and_misaligned_layouts_are_rejected() {
    let mut r = rng(14);
    let pair = Pair::random(&mut r, 0.1);
    let x = random_inputs(&mut r, 4, pair.arch.input_dim());
    for bad in [-0.1, f64::NAN, f64::INFINITY] {
        assert!(matches!(
            approx_similarity(MetricKind::L2, pair.parent(), pair.child(), &x, "act1", bad),
            Err(Error::Contract(_))
        ));
    }
    let mut other = pair.arch.clone();
    other.sizes[1] += 1;
    let other_params = lineage_core::network::init_params(&other, &mut r);
    let stranger = lineage_core::similarity::Subject::new("stranger", &other, &other_params);
    assert!(matches!(
        approx_similarity(MetricKind::L2, pair.parent(), stranger, &x, "act1", 0.1),
        Err(Error::Layout(_))
    ));
}

#[test]
fn oracle_respects_its_budget() {
    let mut r = rng(15);
    let pair = Pair::random(&mut r, 0.1);
    let x = random_inputs(&mut r, 4, pair.arch.input_dim());
    let res = oracle_similarity(
        MetricKind::L2,
        pair.parent(),
        pair.child(),
        &x,
        "output",
        0.1,
        10,
    );
    assert!(matches!(res, Err(Error::OracleUnavailable(_))));
}

#[test]
fn baselines_are_symmetric_but_linearization_is_not() {
    let mut r = rng(16);
    let mut approx_changed = 0;
    for _ in 0..10 {
        let pair = Pair::random(&mut r, 0.3);
        let x = random_inputs(&mut r, 6, pair.arch.input_dim());
        let xp = features(&pair.arch, &pair.parent, &x, "output").unwrap();
        let yc = features(&pair.arch, &pair.child, &x, "output").unwrap();
        for kind in [
            MetricKind::L1,
            MetricKind::L2,
            MetricKind::Cka,
            MetricKind::Dc,
        ] {
            let ab = baseline_similarity(kind, &xp, &yc).unwrap();
            let ba = baseline_similarity(kind, &yc, &xp).unwrap();
            assert!((ab - ba).abs() < 1e-14 * (1.0 + ab.abs()), "{kind}");
            let fwd =
                approx_similarity(kind, pair.parent(), pair.child(), &x, "output", 0.1).unwrap();
            let rev =
                approx_similarity(kind, pair.child(), pair.parent(), &x, "output", 0.1).unwrap();
            assert!((fwd.baseline - rev.baseline).abs() < 1e-14 * (1.0 + ab.abs()));
            if (fwd.score - rev.score).abs() > 1e-12 {
                approx_changed += 1;
            }
        }
    }
    assert!(
        approx_changed >= 35,
        "approx was symmetric in {} of 40 cases",
        40 - approx_changed
    );
}

#[test]
fn lse_gap_to_linf_shrinks_monotonically() {
    let mut r = rng(17);
    for _ in 0..10 {
        let x = random_inputs(&mut r, 7, 5);
        let y = random_inputs(&mut r, 7, 5);
        let linf = baseline_similarity(MetricKind::Linf, &x, &y).unwrap();
        let gaps: Vec<f64> = [0.01, 0.1, 1.0, 10.0, 100.0]
            .iter()
            .map(|&t| (baseline_similarity(MetricKind::Lse(t), &x, &y).unwrap() - linf).abs())
            .collect();
        for w in gaps.windows(2) {
            assert!(w[1] < w[0], "{gaps:?}");
        }
        assert!(gaps[4] < 1e-2);
    }
}

fn random_orthogonal(r: &mut impl Rng, k: usize) -> Tensor {
    let m = DMatrix::from_fn(k, k, |_, _| r.random_range(-1.0..1.0));
    let q = m.qr().q();
    Tensor::matrix(k, k, (0..k * k).map(|i| q[(i / k, i % k)]).collect()).unwrap()
}

/// Squared linear CKA from explicit centred Gram matrices.
fn gram_cka(x: &Tensor, y: &Tensor) -> f64 {
    let n = x.rows();
    let to = |t: &Tensor| DMatrix::from_row_slice(n, t.cols(), t.data());
    let h = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let kx = &h * to(x) * to(x).transpose() * &h;
    let ky = &h * to(y) * to(y).transpose() * &h;
    let xy = kx.dot(&ky);
    xy * xy / (kx.dot(&kx) * ky.dot(&ky))
}

#[test]
fn cka_matches_gram_script_and_is_invariant() {
    let mut r = rng(18);
    for _ in 0..20 {
        let k = r.random_range(2..=6);
        let x = random_inputs(&mut r, 8, k);
        let y = random_inputs(&mut r, 8, k);
        let base = baseline_similarity(MetricKind::Cka, &x, &y).unwrap();
        assert!((base - gram_cka(&x, &y)).abs() < 1e-12);
        let q = random_orthogonal(&mut r, k);
        let s: f64 = r.random_range(0.1..10.0);
        let variants = [
            (x.matmul(&q).unwrap(), y.clone()),
            (x.clone(), y.matmul(&q).unwrap()),
            (x.scale(s), y.clone()),
            (x.clone(), y.scale(s)),
        ];
        for (a, b) in &variants {
            let v = baseline_similarity(MetricKind::Cka, a, b).unwrap();
            assert!((v - base).abs() < 1e-10, "{v} vs {base}");
        }
        let self_sim = baseline_similarity(MetricKind::Cka, &x, &x.matmul(&q).unwrap()).unwrap();
        assert!((self_sim - 1.0).abs() < 1e-10);
    }
}

#[test]
fn dc_is_translation_invariant() {
    let mut r = rng(19);
    for _ in 0..20 {
        let k = r.random_range(1..=5);
        let x = random_inputs(&mut r, 9, k);
        let y = random_inputs(&mut r, 9, k);
        let base = baseline_similarity(MetricKind::Dc, &x, &y).unwrap();
        let shift: Vec<f64> = (0..k).map(|_| r.random_range(-5.0..5.0)).collect();
        let moved = Tensor::matrix(
            9,
            k,
            x.data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + shift[i % k])
                .collect(),
        )
        .unwrap();
        let a = baseline_similarity(MetricKind::Dc, &moved, &y).unwrap();
        let b = baseline_similarity(MetricKind::Dc, &x, &moved).unwrap();
        let c = baseline_similarity(MetricKind::Dc, &x, &moved.scale(1.0)).unwrap();
        assert!((a - base).abs() < 1e-10);
        assert!((b - 1.0).abs() < 1e-10);
        assert_eq!(b, c);
    }
}

#[test]
fn per_sample_w_is_exact() {
    let mut r = rng(20);
    for _ in 0..100 {
        let pair = Pair::random(&mut r, 0.3);
        let x = random_inputs(&mut r, 1, pair.arch.input_dim());
        let tap = random_tap(&mut r, &pair.arch);
        let sol = solve_map_w(pair.parent(), pair.child(), &x, &tap).unwrap();
        assert!(sol.residual < 1e-10, "{}", sol.residual);
        // the linearized row at α = 1 can only do as well or worse
        let delta = aligned_delta(pair.parent(), pair.child(), &tap).unwrap();
        let (_, lin) = linearized_outputs(
            pair.parent(),
            &x,
            &tap,
            &delta,
            1.0,
            DEFAULT_JACOBIAN_BUDGET,
        )
        .unwrap();
        let yc = features(&pair.arch, &pair.child, &x, &tap).unwrap();
        let lin_res = lin
            .sub(&yc)
            .unwrap()
            .data()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(sol.residual <= lin_res + 1e-12);
    }
}

#[test]
fn per_sample_w_vanishes_when_outputs_agree() {
    // hidden unit 0 is dead, so its outgoing weights do not affect the output
    let arch = ArchSpec {
        sizes: vec![2, 3, 2],
        activation: Activation::Relu,
    };
    let mut parent = lineage_core::network::init_params(&arch, &mut rng(21));
    parent.block_values_mut(0)[0] = 0.0;
    parent.block_values_mut(0)[1] = 0.0;
    parent.block_values_mut(1)[0] = -1.0;
    let mut child = parent.clone();
    child.block_values_mut(2)[0] += 0.7;
    child.block_values_mut(2)[3] -= 0.4;
    let p = lineage_core::similarity::Subject::new("p", &arch, &parent);
    let c = lineage_core::similarity::Subject::new("c", &arch, &child);
    let x = Tensor::from_rows(&[vec![0.3, -0.8]]).unwrap();
    let sol = solve_map_w(p, c, &x, "output").unwrap();
    assert!(sol.w.data().iter().all(|&v| v == 0.0));
    assert_eq!(sol.residual, 0.0);
    assert!(matches!(
        solve_map_w(p, p, &x, "output"),
        Err(Error::Degenerate(_))
    ));
}

fn stacked(pair: &Pair, x: &Tensor, tap: &str) -> DMatrix<f64> {
    let p = pair.parent.len();
    let mut rows = Vec::new();
    for i in 0..x.rows() {
        let xi = Tensor::matrix(1, x.cols(), x.row(i).to_vec()).unwrap();
        let j = lineage_core::network::jacobian(
            &pair.arch,
            &pair.parent,
            &xi,
            tap,
            DEFAULT_JACOBIAN_BUDGET,
        )
        .unwrap();
        rows.extend_from_slice(j.data());
    }
    DMatrix::from_row_slice(rows.len() / p, p, &rows)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

#[test]
fn shared_z_recovers_row_space_shift() {
    let mut r = rng(22);
    for _ in 0..10 {
        let pair = Pair::with_arch(
            &mut r,
            ArchSpec {
                sizes: vec![3, 5, 4, 2],
                activation: Activation::Tanh,
            },
            0.0,
        );
        let x = random_inputs(&mut r, 4, 3);
        let j = stacked(&pair, &x, "output");
        // Δθ* = Jᵀ v lies in the row space
        let v = nalgebra::DVector::from_fn(j.nrows(), |_, _| r.random_range(-1.0..1.0));
        let target = j.transpose() * v;
        let delta = ParamVector::new(
            pair.parent.layout().clone(),
            target.iter().copied().collect(),
        )
        .unwrap();
        let y = lineage_core::similarity::synthesize_child_outputs(
            pair.parent(),
            &x,
            "output",
            &delta,
            DEFAULT_JACOBIAN_BUDGET,
        )
        .unwrap();
        let sol = solve_shift_z(pair.parent(), &x, &y, "output", DEFAULT_JACOBIAN_BUDGET).unwrap();
        let e = rel_err(sol.z.values(), delta.values());
        assert!(e < 1e-6, "rel err {e:e}");
        assert!(sol.residual < 1e-8);
        assert_eq!(sol.rank, j.rank(1e-10 * j.norm()));
    }
}

#[test]
fn shared_z_drops_the_null_space_component() {
    let mut r = rng(23);
    for _ in 0..10 {
        let pair = Pair::with_arch(
            &mut r,
            ArchSpec {
                sizes: vec![3, 5, 4, 2],
                activation: Activation::Tanh,
            },
            0.0,
        );
        let x = random_inputs(&mut r, 3, 3);
        let j = stacked(&pair, &x, "output");
        let full: Vec<f64> = (0..pair.parent.len())
            .map(|_| r.random_range(-0.5..0.5))
            .collect();
        let delta = ParamVector::new(pair.parent.layout().clone(), full.clone()).unwrap();
        let y = lineage_core::similarity::synthesize_child_outputs(
            pair.parent(),
            &x,
            "output",
            &delta,
            DEFAULT_JACOBIAN_BUDGET,
        )
        .unwrap();
        let sol = solve_shift_z(pair.parent(), &x, &y, "output", DEFAULT_JACOBIAN_BUDGET).unwrap();
        // projection oracle: J⁺J Δθ* through an SVD pseudo-inverse
        let pinv = j.clone().pseudo_inverse(1e-10 * j.norm()).unwrap();
        let proj = &pinv * (&j * nalgebra::DVector::from_vec(full.clone()));
        let e = rel_err(sol.z.values(), proj.as_slice());
        assert!(e < 1e-6, "rel err {e:e}");
        assert!(
            rel_err(sol.z.values(), &full) > 1e-3,
            "null-space part should be lost"
        );
    }
}

#[test]
fn shared_z_is_zero_for_an_unchanged_child() {
    let mut r = rng(24);
    let pair = Pair::random(&mut r, 0.0);
    let x = random_inputs(&mut r, 3, pair.arch.input_dim());
    let y = features(&pair.arch, &pair.parent, &x, "act1").unwrap();
    let sol = solve_shift_z(pair.parent(), &x, &y, "act1", DEFAULT_JACOBIAN_BUDGET).unwrap();
    assert!(sol.z.values().iter().all(|&v| v == 0.0));
    assert_eq!(sol.residual, 0.0);
}

#[test]
fn approximation_uses_one_backward_pass_and_oracle_uses_n_times_k() {
    let mut r = rng(25);
    for _ in 0..5 {
        let pair = Pair::random(&mut r, 0.2);
        let n = r.random_range(2..=6);
        let x = random_inputs(&mut r, n, pair.arch.input_dim());
        let tap = random_tap(&mut r, &pair.arch);
        let k = pair.arch.tap_width(&tap).unwrap();
        for kind in kinds() {
            let (_, a) = count_backward_passes(|| {
                approx_similarity(kind, pair.parent(), pair.child(), &x, &tap, 0.1).unwrap()
            });
            assert_eq!(a, 1, "{kind}");
            let (_, o) = count_backward_passes(|| {
                oracle_similarity(
                    kind,
                    pair.parent(),
                    pair.child(),
                    &x,
                    &tap,
                    0.1,
                    DEFAULT_JACOBIAN_BUDGET,
                )
                .unwrap()
            });
            assert_eq!(o, (n * k) as u64, "{kind}");
        }
    }
}
