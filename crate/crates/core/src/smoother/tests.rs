use super::*;
use crate::netcore::{build_network, ArchSpec};
use crate::optim::OptimState;
use crate::telescope::Telescope;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Run {
    smoother: SmootherState,
    train: Telescope,
    test: Telescope,
    max_gap: f64,
    max_implied_err: f64,
}

fn data(n: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let y = (0..n)
        .map(|i| x[[i, 0]] * 2.0 - x[[i, 1]] + 0.1 * i as f64 / n as f64)
        .collect();
    (x, y)
}

fn run(spec: &ArchSpec, cfg: &OptimConfig, steps: usize, batch: usize, y_scale: f64) -> Run {
    let n = 16;
    let net = Network::new(spec.clone()).unwrap();
    let (x, y0) = data(n, spec.input_dim, 1);
    let y: Vec<f64> = y0.iter().map(|v| v * y_scale).collect();
    let (xt, _) = data(5, spec.input_dim, 2);
    let mut params = build_network(spec, 3, 1.0).unwrap();
    let mut train = Telescope::new(&net, &params, x.view(), GradSpace::Output).unwrap();
    let mut test = Telescope::new(&net, &params, xt.view(), GradSpace::Output).unwrap();
    let mut sm = SmootherState::new(
        &y,
        &train.trace().f_true,
        &test.trace().f_true,
        &params,
        cfg,
        DEFAULT_BUDGET,
    )
    .unwrap();
    let mut st = OptimState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut order: Vec<usize> = (0..n).collect();
    let mut max_gap: f64 = 0.0;
    let mut max_implied_err: f64 = 0.0;
    for _ in 0..steps {
        order.shuffle(&mut rng);
        let b: Vec<usize> = order[..batch].to_vec();
        let f = train.cache().outputs(GradSpace::Output);
        let w: Vec<f64> = b.iter().map(|&i| (f[i] - y[i]) / batch as f64).collect();
        let xb = x.select(Axis(0), &b);
        let bc = net.forward_batch(&params, xb.view()).unwrap();
        let g = net
            .weighted_grad_sum(&params, &bc, &w, GradSpace::Output)
            .unwrap();
        let delta = st.step(cfg, &g, params.values()).unwrap();
        let implied = sm
            .step(&SmootherStep {
                net: &net,
                params_prev: &params,
                train_cache: train.cache(),
                test_cache: Some(test.cache()),
                batch: &b,
                gamma: st.last_lr().unwrap(),
                phi: st.expose_scaling().ok(),
            })
            .unwrap();
        if let Some(im) = implied {
            for (a, b) in im.iter().zip(&delta) {
                max_implied_err = max_implied_err.max((a - b).abs());
            }
        }
        train.step(&delta).unwrap();
        test.step(&delta).unwrap();
        params.add_assign(&delta).unwrap();
        let gap = sm.invariant_gap(&train.trace().f_tilde, &test.trace().f_tilde);
        max_gap = max_gap.max(gap);
    }
    Run {
        smoother: sm,
        train,
        test,
        max_gap,
        max_implied_err,
    }
}

fn all_kinds() -> Vec<OptimConfig> {
    vec![
        OptimConfig::sgd(0.05),
        OptimConfig::momentum(0.05, 0.9),
        OptimConfig::weight_decay(0.05, 0.1),
        OptimConfig::adamw(0.01, 0.9, 0.99, 0.1, 1e-8),
    ]
}

#[test]
fn master_invariant_holds_for_every_optimizer() {
    let spec = ArchSpec::relu_mlp(3, &[8]);
    for cfg in all_kinds() {
        for batch in [16, 4] {
            let r = run(&spec, &cfg, 30, batch, 1.0);
            assert!(
                r.max_gap <= 1e-8,
                "{:?} batch {batch}: gap {}",
                cfg.kind,
                r.max_gap
            );
            assert!(
                r.max_implied_err <= 1e-10,
                "{:?}: implied update off by {}",
                cfg.kind,
                r.max_implied_err
            );
        }
    }
}

#[test]
fn degenerate_recursions_match_sgd() {
    let spec = ArchSpec::relu_mlp(3, &[8]);
    let sgd = run(&spec, &OptimConfig::sgd(0.05), 20, 4, 1.0);
    for cfg in [
        OptimConfig::momentum(0.05, 0.0),
        OptimConfig::weight_decay(0.05, 0.0),
    ] {
        let other = run(&spec, &cfg, 20, 4, 1.0);
        let ds = (&other.smoother.s_train - &sgd.smoother.s_train)
            .mapv(f64::abs)
            .fold(0.0, |a: f64, b| a.max(*b));
        let dc = other
            .smoother
            .c_test
            .iter()
            .zip(&sgd.smoother.c_test)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(ds <= 1e-12 && dc <= 1e-12, "{:?}: {ds} {dc}", cfg.kind);
    }
}

#[test]
fn zero_step_size_leaves_state_unchanged() {
    let spec = ArchSpec::relu_mlp(3, &[8]);
    let net = Network::new(spec.clone()).unwrap();
    let (x, y) = data(16, 3, 1);
    let params = build_network(&spec, 3, 1.0).unwrap();
    let cache = net.forward_batch(&params, x.view()).unwrap();
    for cfg in all_kinds() {
        let f0 = cache.outputs(GradSpace::Output);
        let mut sm = SmootherState::new(&y, &f0, &[], &params, &cfg, DEFAULT_BUDGET).unwrap();
        let before = sm.clone();
        let phi = vec![1.0; params.len()];
        sm.step(&SmootherStep {
            net: &net,
            params_prev: &params,
            train_cache: &cache,
            test_cache: None,
            batch: &[0, 3, 5],
            gamma: 0.0,
            phi: Some(&phi),
        })
        .unwrap();
        assert_eq!(sm.s_train, before.s_train);
        assert_eq!(sm.c_train, before.c_train);
    }
}

#[test]
fn first_sgd_step_matches_closed_form() {
    let spec = ArchSpec::relu_mlp(3, &[8]);
    let net = Network::new(spec.clone()).unwrap();
    let (x, y) = data(16, 3, 1);
    let (xt, _) = data(2, 3, 7);
    let params = build_network(&spec, 3, 1.0).unwrap();
    let cache = net.forward_batch(&params, x.view()).unwrap();
    let tcache = net.forward_batch(&params, xt.view()).unwrap();
    let f0 = cache.outputs(GradSpace::Output);
    let ft0 = tcache.outputs(GradSpace::Output);
    let cfg = OptimConfig::sgd(0.1);
    let mut sm = SmootherState::new(&y, &f0, &ft0, &params, &cfg, DEFAULT_BUDGET).unwrap();
    let batch = [2usize, 9, 11];
    sm.step(&SmootherStep {
        net: &net,
        params_prev: &params,
        train_cache: &cache,
        test_cache: Some(&tcache),
        batch: &batch,
        gamma: 0.1,
        phi: None,
    })
    .unwrap();
    let gt = net.grad_rows(&params, &tcache, GradSpace::Output).unwrap();
    let gtr = net.grad_rows(&params, &cache, GradSpace::Output).unwrap();
    for r in 0..2 {
        // γ∇f(x)ᵀT_1 with T_1's columns placed at their training indices.
        let mut s_expect = [0.0; 16];
        for &i in &batch {
            s_expect[i] = 0.1 * gt.row(r).dot(&gtr.row(i)) / 3.0;
        }
        let c_expect = ft0[r] - s_expect.iter().zip(&f0).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..16 {
            assert!((sm.s_test[[r, i]] - s_expect[i]).abs() < 1e-14);
        }
        assert!((sm.c_test[r] - c_expect).abs() < 1e-14);
    }
}

#[test]
fn label_linearity_on_parameter_linear_model() {
    let spec = ArchSpec::linear(3);
    let a = run(&spec, &OptimConfig::sgd(0.1), 25, 4, 1.0);
    let b = run(&spec, &OptimConfig::sgd(0.1), 25, 4, 2.0);
    let ds = (&a.smoother.s_train - &b.smoother.s_train)
        .mapv(f64::abs)
        .fold(0.0, |m: f64, v| m.max(*v));
    assert!(ds <= 1e-12);
    let ya = a
        .smoother
        .s_train
        .dot(&ArrayView1::from(a.smoother.labels()));
    let yb = b
        .smoother
        .s_train
        .dot(&ArrayView1::from(b.smoother.labels()));
    for (u, v) in ya.iter().zip(yb.iter()) {
        assert!((2.0 * u - v).abs() <= 1e-12);
    }
    assert!(a.max_gap <= 1e-10);
    let _ = (&a.train, &a.test);
}

#[test]
fn effective_parameter_examples() {
    let eye = Array2::<f64>::eye(5);
    assert_eq!(effective_params(eye.view(), 5).unwrap(), 5.0);
    let uniform = Array2::from_elem((4, 5), 0.2);
    assert!((effective_params(uniform.view(), 5).unwrap() - 1.0).abs() < 1e-15);
    let one = ndarray::arr2(&[[1.0, 0.0, 0.0]]);
    assert_eq!(effective_params(one.view(), 3).unwrap(), 3.0);
    let empty = Array2::<f64>::zeros((0, 3));
    assert!(effective_params(empty.view(), 3).is_err());
    assert_eq!(
        apply_smoother(&[0.0, 1.0, 0.0], 0.0, &[4.0, 5.0, 6.0]).unwrap(),
        5.0
    );
}

#[test]
fn budget_and_support_checks() {
    let spec = ArchSpec::relu_mlp(3, &[8]);
    let params = build_network(&spec, 0, 1.0).unwrap();
    let y = vec![0.0; 16];
    let f = vec![0.0; 16];
    let err = SmootherState::new(
        &y,
        &f,
        &[],
        &params,
        &OptimConfig::adamw(0.1, 0.9, 0.9, 0.0, 1e-8),
        100,
    );
    assert!(matches!(err, Err(Error::MemoryBudget { .. })));
    assert!(SmootherState::new(&y, &f, &[], &params, &OptimConfig::sgd(0.1), 0).is_ok());
    assert!(check_supported(Loss::Bce, 1).is_err());
    assert!(check_supported(Loss::Squared, 2).is_err());
}
