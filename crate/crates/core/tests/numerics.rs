mod common;

use common::*;
use latentbench::classifiers::ClassifierKind;
use latentbench::numcore::{adam_step, AdamConfig, AdamState, Graph, Mode, OpKind, Tensor};
use proptest::prelude::*;

const TOL: f64 = 1e-4;

#[test]
fn every_op_matches_central_differences() {
    for i in 0..5 {
        for case in op_cases(i) {
            let err = latentbench::numcore::grad_check(&case.f, &case.inputs, FD_STEP).unwrap();
            assert!(err < TOL, "{} instance {i}: {err}", case.name);
        }
    }
}

#[test]
fn vae_objective_gradient() {
    for seed in 0..3 {
        let err = vae_grad_error(seed);
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn two_block_vit_gradient() {
    for seed in 0..2 {
        let err = vit_grad_error(seed);
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn classifier_stack_gradients() {
    for kind in ClassifierKind::ALL {
        for seed in 0..3 {
            let err = classifier_grad_error(kind, seed);
            assert!(err < TOL, "{kind} seed {seed}: {err}");
        }
    }
}

#[test]
fn adam_matches_scalar_recurrence() {
    let grads = [0.3, -1.2, 0.05, 2.0, -0.7];
    let mut p = vec![Tensor::new(vec![1], vec![0.8]).unwrap()];
    let mut state = AdamState::new(AdamConfig::with_lr(0.01), &p).unwrap();
    for g in grads {
        adam_step(&mut p, &[Tensor::new(vec![1], vec![g]).unwrap()], &mut state).unwrap();
    }
    let expect = scalar_adam(0.8, &grads, 0.01);
    assert!((p[0].data()[0] - expect).abs() < 1e-15, "{} vs {expect}", p[0].data()[0]);
    assert_eq!(state.t, 5);
}

#[test]
fn forward_op_dispatch_by_name() {
    let mut g = Graph::new(Mode::Inference, 0);
    let a = g.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let b = g.constant(Tensor::new(vec![2], vec![10.0, 20.0]).unwrap()).unwrap();
    let y = g.forward_op(&"add".parse::<OpKind>().unwrap(), &[a, b]).unwrap();
    assert_eq!(g.value(y).data(), &[11.0, 22.0, 13.0, 24.0]);
    let s = g.forward_op(&"reduce-sum:0".parse().unwrap(), &[y]).unwrap();
    assert_eq!(g.value(s).data(), &[24.0, 46.0]);
    assert!("conv2d".parse::<OpKind>().is_err());
}

#[test]
fn eval_mode_dropout_is_identity() {
    let mut g = Graph::new(Mode::Inference, 3);
    let x = g.constant(Tensor::filled(&[4, 5], 2.5)).unwrap();
    let y = g.dropout(x, 0.5).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

#[test]
fn train_mode_dropout_scales_survivors() {
    let mut g = Graph::new(Mode::Train, 3);
    let x = g.constant(Tensor::filled(&[50, 40], 1.0)).unwrap();
    let y = g.dropout(x, 0.25).unwrap();
    let v = g.value(y).data();
    assert!(v.iter().all(|&e| e == 0.0 || (e - 1.0 / 0.75).abs() < 1e-12));
    let kept = v.iter().filter(|&&e| e != 0.0).count() as f64 / v.len() as f64;
    assert!((kept - 0.75).abs() < 0.05, "{kept}");
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..9, 1usize..9, 1usize..9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_matches_triple_loop((m, k, n) in dims(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = uniform(&mut r, &[m, k], -3.0, 3.0);
        let b = uniform(&mut r, &[k, n], -3.0, 3.0);
        let mut g = Graph::inference();
        let (va, vb) = (g.constant(a.clone()).unwrap(), g.constant(b.clone()).unwrap());
        let c = g.matmul(va, vb).unwrap();
        let expect = naive_matmul(a.data(), b.data(), m, k, n);
        prop_assert_eq!(g.shape(c), &[m, n]);
        for (x, y) in g.value(c).data().iter().zip(&expect) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..8, seed in any::<u64>(), shift in -500.0f64..500.0) {
        let x = uniform(&mut rng(seed), &[rows, cols], -30.0, 30.0);
        let mut g = Graph::inference();
        let v = g.constant(x).unwrap();
        let v = g.add_scalar(v, shift).unwrap();
        let s = g.softmax(v, 1).unwrap();
        for r in g.value(s).data().chunks(cols) {
            prop_assert!(r.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(rows in 1usize..5, cols in 2usize..9, seed in any::<u64>()) {
        let x = uniform(&mut rng(seed), &[rows, cols], -10.0, 10.0);
        let mut g = Graph::inference();
        let v = g.constant(x).unwrap();
        let y = g.layer_norm(v, 1).unwrap();
        for r in g.value(y).data().chunks(cols) {
            let mean = r.iter().sum::<f64>() / cols as f64;
            let var = r.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / cols as f64;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn permute_then_inverse_is_identity(seed in any::<u64>()) {
        let x = uniform(&mut rng(seed), &[2, 3, 4], -1.0, 1.0);
        let mut g = Graph::inference();
        let v = g.constant(x.clone()).unwrap();
        let p = g.permute(v, &[1, 2, 0]).unwrap();
        let back = g.permute(p, &[2, 0, 1]).unwrap();
        prop_assert_eq!(g.value(back), &x);
    }
}
