//! Linear mode connectivity probes: paired children spawned from a shared
//! checkpoint, loss barriers along the straight line between them, layerwise
//! gradient drift and two-model ensembles.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::netcore::{sigmoid, GradSpace, Loss, Network, OutputActivation, ParamVector, SlotKind};
use crate::train::{score_outputs, EvalMetrics, Run, TrainSpec};

/// Spawn steps, child seeds and scan resolution of an LMC study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpawnPlan {
    pub spawn_steps: Vec<usize>,
    pub child_seeds: (u64, u64),
    pub alpha_points: usize,
    pub drift_subset: usize,
}

impl SpawnPlan {
    pub fn new(spawn_steps: Vec<usize>, child_seeds: (u64, u64)) -> Result<Self> {
        let plan = SpawnPlan {
            spawn_steps,
            child_seeds,
            alpha_points: 30,
            drift_subset: 256,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spawn_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "spawn steps must be strictly increasing".into(),
            ));
        }
        if self.alpha_points < 2 {
            return Err(Error::InvalidConfig(
                "the alpha grid needs at least its two endpoints".into(),
            ));
        }
        Ok(())
    }

    pub fn alphas(&self) -> Vec<f64> {
        alpha_grid(self.alpha_points)
    }
}

/// `k` equally spaced values from 0 to 1 inclusive.
pub fn alpha_grid(k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..k)
            .map(|i| {
                if i == k - 1 {
                    1.0
                } else {
                    i as f64 / (k - 1) as f64
                }
            })
            .collect(),
    }
}

/// Checkpoints of one base run keyed by step.
#[derive(Debug, Clone)]
pub struct BaseRun {
    pub spec: TrainSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub checkpoints: BTreeMap<usize, Checkpoint>,
}

impl BaseRun {
    /// Trains `steps` steps from `start`, keeping checkpoints at `keep`.
    pub fn record(mut start: Run, steps: usize, keep: &[usize]) -> Result<Self> {
        let mut checkpoints = BTreeMap::new();
        while start.step_count() <= steps {
            if keep.contains(&start.step_count()) {
                checkpoints.insert(
                    start.step_count(),
                    start.checkpoint(serde_json::Value::Null)?,
                );
            }
            if start.step_count() == steps {
                break;
            }
            start.step()?;
        }
        Ok(BaseRun {
            spec: start.spec().clone(),
            train: start.train_data().clone(),
            test: start.test_data().clone(),
            checkpoints,
        })
    }

    pub fn restore(&self, step: usize) -> Result<Run> {
        let ck = self
            .checkpoints
            .get(&step)
            .ok_or(Error::MissingCheckpoint(step))?;
        Run::from_checkpoint(self.spec.clone(), self.train.clone(), self.test.clone(), ck)
    }
}

/// Two children restored at `t'` that continue to `total_steps` with their own batch orders.
pub fn spawn_and_train(
    base: &BaseRun,
    t_spawn: usize,
    total_steps: usize,
    seed_a: u64,
    seed_b: u64,
) -> Result<(ParamVector, ParamVector)> {
    let child = |seed: u64| -> Result<ParamVector> {
        let mut run = base.restore(t_spawn)?;
        run.reseed_batches(seed);
        while run.step_count() < total_steps {
            run.step()?;
        }
        Ok(run.params().clone())
    };
    let a = child(seed_a)?;
    let b = if seed_a == seed_b {
        a.clone()
    } else {
        child(seed_b)?
    };
    Ok((a, b))
}

/// One α of a barrier scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierRow {
    pub alpha: f64,
    /// Loss of the weight-interpolated model `αθ_a + (1−α)θ_b`.
    pub loss_lmc: f64,
    /// `α L(θ_a) + (1−α) L(θ_b)`.
    pub loss_avg: f64,
    pub acc_lmc: f64,
    pub acc_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierScan {
    pub rows: Vec<BarrierRow>,
    /// `max_α (loss_lmc − loss_avg)`.
    pub barrier: f64,
    /// `max_α (acc_avg − acc_lmc)`.
    pub accuracy_gap: f64,
}

fn outputs(
    net: &Network,
    params: &ParamVector,
    x: ArrayView2<'_, f64>,
    space: GradSpace,
) -> Result<Vec<f64>> {
    Ok(net.forward_batch(params, x)?.outputs(space))
}

fn accuracy(m: &EvalMetrics) -> f64 {
    1.0 - m.err.unwrap_or(f64::NAN)
}

/// Loss and accuracy of weight-interpolated models over an α grid.
pub fn barrier_scan(
    net: &Network,
    theta_a: &ParamVector,
    theta_b: &ParamVector,
    alphas: &[f64],
    eval: &Dataset,
    loss: Loss,
) -> Result<BarrierScan> {
    if theta_a.layout() != theta_b.layout() {
        return Err(Error::LayoutMismatch);
    }
    let score = |p: &ParamVector| -> Result<EvalMetrics> {
        Ok(score_outputs(
            &outputs(net, p, eval.inputs.view(), GradSpace::Output)?,
            &eval.targets,
            loss,
        ))
    };
    let ma = score(theta_a)?;
    let mb = score(theta_b)?;
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let m = if alpha == 1.0 {
            ma
        } else if alpha == 0.0 {
            mb
        } else {
            score(&ParamVector::interpolate(theta_a, theta_b, alpha)?)?
        };
        rows.push(BarrierRow {
            alpha,
            loss_lmc: m.loss,
            loss_avg: alpha * ma.loss + (1.0 - alpha) * mb.loss,
            acc_lmc: accuracy(&m),
            acc_avg: alpha * accuracy(&ma) + (1.0 - alpha) * accuracy(&mb),
        });
    }
    let barrier = rows
        .iter()
        .map(|r| r.loss_lmc - r.loss_avg)
        .fold(f64::NEG_INFINITY, f64::max);
    let accuracy_gap = rows
        .iter()
        .map(|r| r.acc_avg - r.acc_lmc)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BarrierScan {
        rows,
        barrier,
        accuracy_gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// `α f_a + (1−α) f_b` on outputs.
    PredictionAvg,
    /// `σ(α g_a + (1−α) g_b)` on pre-activations.
    PreactivationAvg,
}

/// Outputs of the α-mixture of two models.
pub fn ensemble_outputs(
    net: &Network,
    theta_a: &ParamVector,
    theta_b: &ParamVector,
    alpha: f64,
    x: ArrayView2<'_, f64>,
    mode: EnsembleMode,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let space = match mode {
        EnsembleMode::PredictionAvg => GradSpace::Output,
        EnsembleMode::PreactivationAvg => GradSpace::PreActivation,
    };
    let fa = outputs(net, theta_a, x, space)?;
    let fb = outputs(net, theta_b, x, space)?;
    let squash = mode == EnsembleMode::PreactivationAvg
        && net.spec().output_activation == OutputActivation::Sigmoid;
    Ok(fa
        .iter()
        .zip(&fb)
        .map(|(a, b)| {
            let v = alpha * a + (1.0 - alpha) * b;
            if squash {
                sigmoid(v)
            } else {
                v
            }
        })
        .collect())
}

pub fn ensemble_eval(
    net: &Network,
    theta_a: &ParamVector,
    theta_b: &ParamVector,
    alpha: f64,
    eval: &Dataset,
    mode: EnsembleMode,
    loss: Loss,
) -> Result<EvalMetrics> {
    let f = ensemble_outputs(net, theta_a, theta_b, alpha, eval.inputs.view(), mode)?;
    Ok(score_outputs(&f, &eval.targets, loss))
}

/// Mean squared change of pre-activation gradients per trainable layer.
///
/// Entry `l` averages `(∇g_after(x) − ∇g_before(x))²` over the rows of `x`
/// and the weights and bias of layer `l`.
pub fn grad_drift_by_layer(
    net: &Network,
    before: &ParamVector,
    after: &ParamVector,
    x: ArrayView2<'_, f64>,
) -> Result<Vec<f64>> {
    if before.layout() != after.layout() {
        return Err(Error::LayoutMismatch);
    }
    let ga = net.grad_rows(
        before,
        &net.forward_batch(before, x)?,
        GradSpace::PreActivation,
    )?;
    let gb = net.grad_rows(
        after,
        &net.forward_batch(after, x)?,
        GradSpace::PreActivation,
    )?;
    let layout = net.layout();
    let mut out = Vec::new();
    for layer in 0..net.num_layers() {
        let ranges: Vec<_> = [SlotKind::Weight, SlotKind::Bias]
            .iter()
            .filter_map(|&k| layout.slot(layer, k).map(|s| s.range()))
            .collect();
        let count: usize = ranges.iter().map(|r| r.len()).sum::<usize>() * x.nrows();
        let mut acc = 0.0;
        for (ra, rb) in ga.rows().into_iter().zip(gb.rows()) {
            for r in &ranges {
                for j in r.clone() {
                    let d = rb[j] - ra[j];
                    acc += d * d;
                }
            }
        }
        out.push(acc / count as f64);
    }
    Ok(out)
}

/// Barrier scan and gradient drift measured for one spawn step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpawnResult {
    pub t_spawn: usize,
    pub scan: BarrierScan,
    pub drift: Vec<f64>,
}

/// Per-spawn-step results of an LMC study.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BarrierReport {
    pub entries: Vec<SpawnResult>,
}

impl BarrierReport {
    /// Header `t_spawn,alpha,loss_lmc,loss_avg,acc_lmc,acc_avg`, one row per α.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_spawn,alpha,loss_lmc,loss_avg,acc_lmc,acc_avg\n");
        for e in &self.entries {
            for r in &e.scan.rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    e.t_spawn, r.alpha, r.loss_lmc, r.loss_avg, r.acc_lmc, r.acc_avg
                );
            }
        }
        s
    }

    /// Header `t_spawn,layer,drift`.
    pub fn drift_csv(&self) -> String {
        let mut s = String::from("t_spawn,layer,drift\n");
        for e in &self.entries {
            for (l, d) in e.drift.iter().enumerate() {
                let _ = writeln!(s, "{},{},{}", e.t_spawn, l, d);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests;
