mod support;

use lineage_core::gradcheck::{central_difference, max_relative_error, tape_op_cases, FD_STEP};
use lineage_core::network::{
    forward, init_params, jacobian, weighted_output_grad, DEFAULT_JACOBIAN_BUDGET,
};
use lineage_core::{Activation, ArchSpec, ParamVector, Tensor};
use proptest::prelude::*;
use rand::Rng;
use support::{explicit_contraction, hand_forward, random_inputs, rng, Pair};

#[test]
fn every_tape_op_matches_finite_differences() {
    for seed in 0..20 {
        for case in tape_op_cases(seed) {
            let err = case.relative_error();
            assert!(err < 1e-6, "op {} seed {seed}: rel err {err:e}", case.name);
        }
    }
}

#[test]
fn seeded_2_4_2_forward_matches_hand_computation() {
    // expected value computed independently with numpy
    let arch = ArchSpec {
        sizes: vec![2, 4, 2],
        activation: Activation::Relu,
    };
    let values = vec![
        0.3, -0.7, 1.1, 0.2, -0.4, 0.9, 0.05, -1.3, // fc1.weight
        0.1, -0.2, 0.0, 0.3, // fc1.bias
        0.6, -0.1, 0.8, 0.2, -0.5, 0.7, 0.3, -0.9, // fc2.weight
        0.05, -0.15, // fc2.bias
    ];
    let p = ParamVector::new(arch.layout(), values).unwrap();
    let x = Tensor::from_rows(&[vec![0.5, -0.5]]).unwrap();
    let out = forward(&arch, &p, &x, &[]).unwrap();
    let expect = [0.58, -1.1525];
    for (a, b) in out.output().data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn tape_forward_matches_nested_loops() {
    let mut r = rng(1);
    for _ in 0..20 {
        let pair = Pair::random(&mut r, 0.0);
        let x = random_inputs(&mut r, 5, pair.arch.input_dim());
        let out = forward(&pair.arch, &pair.parent, &x, &[]).unwrap();
        for i in 0..5 {
            let hand = hand_forward(&pair.arch, &pair.parent, x.row(i));
            for (a, b) in out.output().row(i).iter().zip(&hand) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn mean_squared_output_gradient_matches_finite_differences() {
    let mut r = rng(2);
    for _ in 0..20 {
        let pair = Pair::random(&mut r, 0.0);
        let x = random_inputs(&mut r, 6, pair.arch.input_dim());
        let loss = |p: &ParamVector| {
            let f = forward(&pair.arch, p, &x, &[]).unwrap();
            let o = f.output();
            o.data().iter().map(|v| v * v).sum::<f64>() / o.numel() as f64
        };
        let mut f = forward(&pair.arch, &pair.parent, &x, &[]).unwrap();
        let sq = f.tape.mul(f.output, f.output);
        let n = f.tape.value(sq).numel() as f64;
        let s = f.tape.sum(sq);
        let root = f.tape.scale(s, 1.0 / n);
        let analytic = f.tape.grad_scalar(root).unwrap();
        let numeric = central_difference(&pair.parent, FD_STEP, loss);
        let err = max_relative_error(analytic.values(), numeric.values());
        assert!(err < 1e-6, "rel err {err:e}");
    }
}

#[test]
fn linear_layer_jacobian_is_kronecker_of_input() {
    // y = W x + b, ∂y_k/∂W_kj = x_j, ∂y_k/∂b_k = 1
    let arch = ArchSpec {
        sizes: vec![3, 2],
        activation: Activation::Relu,
    };
    let p = init_params(&arch, &mut rng(3));
    let x = [0.7, -1.2, 2.5];
    let j = jacobian(
        &arch,
        &p,
        &Tensor::matrix(1, 3, x.to_vec()).unwrap(),
        "output",
        1000,
    )
    .unwrap();
    let expect = [
        [x[0], x[1], x[2], 0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, x[0], x[1], x[2], 0.0, 1.0],
    ];
    for k in 0..2 {
        assert_eq!(j.row(k), &expect[k]);
    }
}

#[test]
fn jacobian_rows_equal_per_coordinate_gradients() {
    let mut r = rng(4);
    for _ in 0..20 {
        let arch = ArchSpec {
            sizes: vec![2, 3, 2],
            activation: Activation::Relu,
        };
        let pair = Pair::with_arch(&mut r, arch, 0.0);
        let x = random_inputs(&mut r, 1, 2);
        let j = jacobian(&pair.arch, &pair.parent, &x, "output", 1000).unwrap();
        for k in 0..2 {
            let mut f = forward(&pair.arch, &pair.parent, &x, &[]).unwrap();
            let mut sel = vec![0.0; 2];
            sel[k] = 1.0;
            let root = f
                .tape
                .weighted_sum(f.output, Tensor::matrix(1, 2, sel).unwrap());
            let g = f.tape.grad_scalar(root).unwrap();
            assert_eq!(j.row(k), g.values());
            // and against finite differences of the hand-rolled forward
            let numeric = central_difference(&pair.parent, FD_STEP, |p| {
                hand_forward(&pair.arch, p, x.row(0))[k]
            });
            assert!(max_relative_error(j.row(k), numeric.values()) < 1e-6);
        }
    }
}

#[test]
fn weighted_grad_equals_explicit_contraction() {
    let mut r = rng(5);
    for _ in 0..25 {
        let pair = Pair::random(&mut r, 0.0);
        let n = r.random_range(1..=6);
        let x = random_inputs(&mut r, n, pair.arch.input_dim());
        for tap in pair.arch.tap_names() {
            let k = pair.arch.tap_width(&tap).unwrap();
            let w = random_inputs(&mut r, n, k);
            let fast = weighted_output_grad(&pair.arch, &pair.parent, &x, &w, &tap).unwrap();
            let slow = explicit_contraction(&pair.arch, &pair.parent, &x, &w, &tap);
            let diff = fast
                .values()
                .iter()
                .zip(&slow)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-10, "tap {tap}: {diff:e}");
        }
    }
}

#[test]
fn selector_weights_pick_a_jacobian_row() {
    let mut r = rng(6);
    let pair = Pair::random(&mut r, 0.0);
    let x = random_inputs(&mut r, 1, pair.arch.input_dim());
    let k = pair.arch.output_dim();
    let j = jacobian(
        &pair.arch,
        &pair.parent,
        &x,
        "output",
        DEFAULT_JACOBIAN_BUDGET,
    )
    .unwrap();
    for c in 0..k {
        let mut sel = vec![0.0; k];
        sel[c] = 1.0;
        let g = weighted_output_grad(
            &pair.arch,
            &pair.parent,
            &x,
            &Tensor::matrix(1, k, sel).unwrap(),
            "output",
        )
        .unwrap();
        assert_eq!(g.values(), j.row(c));
    }
    let zero = weighted_output_grad(
        &pair.arch,
        &pair.parent,
        &x,
        &Tensor::zeros(&[1, k]),
        "output",
    )
    .unwrap();
    assert!(zero.values().iter().all(|&v| v == 0.0));
}

#[test]
fn identical_seeds_are_bit_identical() {
    let run = || {
        let mut r = rng(7);
        let pair = Pair::random(&mut r, 0.1);
        let x = random_inputs(&mut r, 4, pair.arch.input_dim());
        let w = random_inputs(&mut r, 4, pair.arch.output_dim());
        let f = forward(&pair.arch, &pair.parent, &x, &[]).unwrap();
        let g = weighted_output_grad(&pair.arch, &pair.parent, &x, &w, "output").unwrap();
        (f.output().clone(), g)
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(ga, gb);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weighted_grad_is_linear_in_weights(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = rng(seed);
        let pair = Pair::random(&mut r, 0.0);
        let x = random_inputs(&mut r, 3, pair.arch.input_dim());
        let k = pair.arch.output_dim();
        let w1 = random_inputs(&mut r, 3, k);
        let w2 = random_inputs(&mut r, 3, k);
        let mix = w1.scale(a).add(&w2.scale(b)).unwrap();
        let g = |w: &Tensor| weighted_output_grad(&pair.arch, &pair.parent, &x, w, "output").unwrap();
        let lhs = g(&mix);
        let rhs = g(&w1).scale(a).axpy(b, &g(&w2)).unwrap();
        let scale = 1.0 + rhs.norm();
        for (l, r) in lhs.values().iter().zip(rhs.values()) {
            prop_assert!((l - r).abs() <= 1e-12 * scale);
        }
    }
}
