use super::*;
use crate::netcore::{build_network, ArchSpec};
use crate::optim::OptimConfig;
use crate::train::Tracking;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let x = Array2::from_shape_fn((n, 4), |(i, j)| {
        let shift = if j == 0 { 2.0 * y[i] - 1.0 } else { 0.0 };
        shift + rng.random_range(-1.0..1.0)
    });
    Dataset::new(x, y, "train", "blobs").unwrap()
}

fn spec(width: usize) -> TrainSpec {
    TrainSpec {
        arch: ArchSpec::relu_mlp(4, &[width]).with_output(OutputActivation::Sigmoid),
        init_seed: 3,
        init_scale: 1.0,
        optim: OptimConfig::sgd(0.1),
        loss: Loss::Bce,
        batch_size: 8,
        batch_seed: 1,
        tracking: Tracking::default(),
    }
}

fn base(width: usize, steps: usize, keep: &[usize]) -> BaseRun {
    let run = Run::new(spec(width), blobs(64, 1), blobs(32, 2)).unwrap();
    BaseRun::record(run, steps, keep).unwrap()
}

#[test]
fn alpha_grid_spans_unit_interval() {
    let a = alpha_grid(30);
    assert_eq!(a.len(), 30);
    assert_eq!((a[0], a[29]), (0.0, 1.0));
    assert!(a.windows(2).all(|w| w[0] < w[1]));
    assert!(SpawnPlan::new(vec![5, 2], (1, 2)).is_err());
}

#[test]
fn equal_seeds_give_identical_children() {
    let b = base(32, 40, &[0, 10, 40]);
    let (x, y) = spawn_and_train(&b, 10, 40, 7, 7).unwrap();
    assert_eq!(x.values(), y.values());
    let (u, v) = spawn_and_train(&b, 10, 40, 7, 8).unwrap();
    assert_ne!(u.values(), v.values());
    let net = Network::new(b.spec.arch.clone()).unwrap();
    let la = crate::train::evaluate(&net, &u, &b.train, Loss::Bce)
        .unwrap()
        .loss;
    let lb = crate::train::evaluate(&net, &v, &b.train, Loss::Bce)
        .unwrap()
        .loss;
    assert!((la - lb).abs() > 0.0);
}

#[test]
fn spawning_at_the_end_reproduces_the_base() {
    let b = base(8, 25, &[25]);
    let end = b.restore(25).unwrap();
    let (x, y) = spawn_and_train(&b, 25, 25, 3, 4).unwrap();
    assert_eq!(x.values(), end.params().values());
    assert_eq!(y.values(), end.params().values());
    assert!(matches!(
        spawn_and_train(&b, 10, 25, 1, 2),
        Err(Error::MissingCheckpoint(10))
    ));
}

#[test]
fn barrier_endpoints_are_the_children() {
    let arch = spec(6).arch;
    let net = Network::new(arch.clone()).unwrap();
    let a = build_network(&arch, 1, 1.0).unwrap();
    let b = build_network(&arch, 2, 1.0).unwrap();
    let data = blobs(20, 5);
    let scan = barrier_scan(&net, &a, &b, &alpha_grid(30), &data, Loss::Bce).unwrap();
    let la = crate::train::evaluate(&net, &a, &data, Loss::Bce).unwrap();
    let lb = crate::train::evaluate(&net, &b, &data, Loss::Bce).unwrap();
    assert_eq!(scan.rows[0].loss_lmc, lb.loss);
    assert_eq!(scan.rows[29].loss_lmc, la.loss);
    assert_eq!(scan.rows[0].loss_lmc, scan.rows[0].loss_avg);
    assert!(scan.barrier >= 0.0);
    let other = build_network(&ArchSpec::relu_mlp(4, &[7]), 2, 1.0).unwrap();
    assert!(matches!(
        barrier_scan(&net, &a, &other, &[0.5], &data, Loss::Bce),
        Err(Error::LayoutMismatch)
    ));
}

#[test]
fn linear_models_average_identically() {
    let arch = ArchSpec::linear(4);
    let net = Network::new(arch.clone()).unwrap();
    let a = build_network(&arch, 1, 1.0).unwrap();
    let b = build_network(&arch, 2, 3.0).unwrap();
    let data = blobs(25, 6);
    for alpha in alpha_grid(30) {
        let w = ParamVector::interpolate(&a, &b, alpha).unwrap();
        let direct = net
            .forward_batch(&w, data.inputs.view())
            .unwrap()
            .outputs(GradSpace::Output);
        let ens = ensemble_outputs(
            &net,
            &a,
            &b,
            alpha,
            data.inputs.view(),
            EnsembleMode::PredictionAvg,
        )
        .unwrap();
        for (u, v) in direct.iter().zip(&ens) {
            assert!((u - v).abs() <= 1e-10);
        }
    }
}

#[test]
fn ensemble_degenerate_cases() {
    let arch = spec(5).arch;
    let net = Network::new(arch.clone()).unwrap();
    let a = build_network(&arch, 1, 1.0).unwrap();
    let b = build_network(&arch, 2, 1.0).unwrap();
    let data = blobs(10, 7);
    let single = crate::train::evaluate(&net, &a, &data, Loss::Bce).unwrap();
    for mode in [EnsembleMode::PredictionAvg, EnsembleMode::PreactivationAvg] {
        assert_eq!(
            ensemble_eval(&net, &a, &a, 0.3, &data, mode, Loss::Bce)
                .unwrap()
                .err,
            single.err
        );
        let at_one = ensemble_eval(&net, &a, &b, 1.0, &data, mode, Loss::Bce).unwrap();
        assert!((at_one.loss - single.loss).abs() <= 1e-15);
    }
    assert!(ensemble_eval(
        &net,
        &a,
        &b,
        1.5,
        &data,
        EnsembleMode::PredictionAvg,
        Loss::Bce
    )
    .is_err());
}

#[test]
fn drift_is_zero_without_change_or_for_linear_models() {
    let arch = spec(5).arch;
    let net = Network::new(arch.clone()).unwrap();
    let a = build_network(&arch, 1, 1.0).unwrap();
    let x = blobs(12, 3).inputs;
    assert!(grad_drift_by_layer(&net, &a, &a, x.view())
        .unwrap()
        .iter()
        .all(|&d| d == 0.0));
    let b = build_network(&arch, 2, 1.0).unwrap();
    let d = grad_drift_by_layer(&net, &a, &b, x.view()).unwrap();
    assert_eq!(d.len(), 2);
    assert!(d.iter().all(|&v| v > 0.0));
    let lin = ArchSpec::linear(4);
    let ln = Network::new(lin.clone()).unwrap();
    let (p, q) = (
        build_network(&lin, 1, 1.0).unwrap(),
        build_network(&lin, 9, 2.0).unwrap(),
    );
    assert!(grad_drift_by_layer(&ln, &p, &q, x.view())
        .unwrap()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn report_csv_shapes() {
    let b = base(6, 10, &[0, 10]);
    let net = Network::new(b.spec.arch.clone()).unwrap();
    let mut report = BarrierReport::default();
    for t in [0, 10] {
        let (x, y) = spawn_and_train(&b, t, 10, 1, 2).unwrap();
        let scan = barrier_scan(&net, &x, &y, &alpha_grid(5), &b.test, Loss::Bce).unwrap();
        let drift = grad_drift_by_layer(&net, &x, &y, b.test.inputs.view()).unwrap();
        report.entries.push(SpawnResult {
            t_spawn: t,
            scan,
            drift,
        });
    }
    assert_eq!(report.to_csv().lines().count(), 11);
    assert_eq!(report.drift_csv().lines().count(), 5);
    assert!(report.to_csv().starts_with("t_spawn,alpha,loss_lmc"));
}
