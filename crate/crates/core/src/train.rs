//! Deterministic training runs with optional telescoping and smoother tracking.
//!
//! A [`Run`] owns parameters, optimizer buffers and trackers for one seed.
//! Batch order for epoch `e` is a permutation drawn from stream `e` of a
//! ChaCha generator keyed by the batch seed, so any step's batch can be
//! recomputed from `(seed, step)` alone. This is what lets checkpoints
//! resume bit-for-bit and lets spawned children diverge only by reseeding.

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::netcore::{
    build_network, loss_and_grad, sigmoid, ArchSpec, GradSpace, Loss, Network, OutputActivation,
    ParamVector,
};
use crate::optim::{OptimConfig, OptimState};
use crate::smoother::{check_supported, SmootherState, SmootherStep, DEFAULT_BUDGET};
use crate::telescope::{approx_error, Telescope, TelescopeState};

/// What a run maintains beyond the parameters themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tracking {
    /// Telescoped and linearized predictions on the tracked test rows.
    pub telescope: bool,
    /// Smoother rows for the training set and the tracked test rows.
    pub smoother: bool,
    /// Leading test rows that are tracked; 0 tracks the whole test set.
    pub test_rows: usize,
    pub space: GradSpace,
    /// Largest tolerated `|S y + c − f̃|` before a run aborts.
    pub invariant_tol: f64,
    pub smoother_budget: usize,
}

impl Default for Tracking {
    fn default() -> Self {
        Tracking {
            telescope: false,
            smoother: false,
            test_rows: 0,
            space: GradSpace::Output,
            invariant_tol: 1e-6,
            smoother_budget: DEFAULT_BUDGET,
        }
    }
}

/// Everything that determines a run given its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub arch: ArchSpec,
    pub init_seed: u64,
    pub init_scale: f64,
    pub optim: OptimConfig,
    pub loss: Loss,
    /// Rows per step; 0 or anything at least `n` means full batch.
    pub batch_size: usize,
    pub batch_seed: u64,
    pub tracking: Tracking,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.optim.validate()?;
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "init_scale must be positive, got {}",
                self.init_scale
            )));
        }
        if self.tracking.smoother {
            check_supported(self.loss, self.arch.output_dim)?;
            if self.arch.output_activation != OutputActivation::Identity {
                return Err(Error::SmootherUnsupported("sigmoid heads".into()));
            }
            if self.tracking.space != GradSpace::Output {
                return Err(Error::SmootherUnsupported("pre-activation tracking".into()));
            }
        }
        if !(self.tracking.invariant_tol > 0.0) {
            return Err(Error::InvalidConfig(
                "invariant_tol must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One line of a run's metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_mse: f64,
    pub test_mse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_err: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_err: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_abs_tilde: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_abs_lin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_train: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_test: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariant_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_norm_train: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_norm_test: Option<f64>,
    /// Seconds since the run started; the only nondeterministic field.
    pub wall_s: f64,
}

/// Loss, mean squared error and (for binary targets) 0.5-threshold error rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub mse: f64,
    pub err: Option<f64>,
}

/// Metrics of already computed outputs.
pub fn score_outputs(outputs: &[f64], targets: &[f64], loss: Loss) -> EvalMetrics {
    let n = targets.len() as f64;
    let mut l = 0.0;
    let mut mse = 0.0;
    let mut wrong = 0usize;
    for (&f, &y) in outputs.iter().zip(targets) {
        l += loss_and_grad(f, y, loss).0;
        mse += (f - y) * (f - y);
        if (f > 0.5) != (y > 0.5) {
            wrong += 1;
        }
    }
    let binary = targets.iter().all(|&y| y == 0.0 || y == 1.0);
    EvalMetrics {
        loss: l / n,
        mse: mse / n,
        err: binary.then(|| wrong as f64 / n),
    }
}

pub fn evaluate(
    net: &Network,
    params: &ParamVector,
    data: &Dataset,
    loss: Loss,
) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::InsufficientData("evaluation set is empty".into()));
    }
    let cache = net.forward_batch(params, data.inputs.view())?;
    Ok(score_outputs(
        &cache.outputs(GradSpace::Output),
        &data.targets,
        loss,
    ))
}

/// Batch-mean loss gradient at `params` over `rows` of `data`.
pub fn batch_gradient(
    net: &Network,
    params: &ParamVector,
    data: &Dataset,
    rows: &[usize],
    loss: Loss,
) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let xb = data.inputs.select(Axis(0), rows);
    let cache = net.forward_batch(params, xb.view())?;
    let b = rows.len() as f64;
    let sigmoid_bce =
        loss == Loss::Bce && net.spec().output_activation == OutputActivation::Sigmoid;
    let (weights, space): (Vec<f64>, GradSpace) = if sigmoid_bce {
        let g = cache.outputs(GradSpace::PreActivation);
        (
            rows.iter()
                .zip(&g)
                .map(|(&i, &gi)| (sigmoid(gi) - data.targets[i]) / b)
                .collect(),
            GradSpace::PreActivation,
        )
    } else {
        let f = cache.outputs(GradSpace::Output);
        (
            rows.iter()
                .zip(&f)
                .map(|(&i, &fi)| loss_and_grad(fi, data.targets[i], loss).1 / b)
                .collect(),
            GradSpace::Output,
        )
    };
    net.weighted_grad_sum(params, &cache, &weights, space)
}

/// Batch rows for the 1-based step `t`.
pub fn batch_for_step(n: usize, batch_size: usize, seed: u64, t: usize) -> Vec<usize> {
    if batch_size == 0 || batch_size >= n {
        return (0..n).collect();
    }
    let per_epoch = n.div_ceil(batch_size);
    let k = t - 1;
    let slot = k % per_epoch;
    let perm = epoch_permutation(n, seed, k / per_epoch);
    perm[slot * batch_size..((slot + 1) * batch_size).min(n)].to_vec()
}

fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    sample(&mut rng, n, n).into_vec()
}

#[derive(Debug, Clone)]
pub struct Run {
    spec: TrainSpec,
    net: Network,
    train: Dataset,
    test: Dataset,
    tracked: Array2<f64>,
    params0: ParamVector,
    params: ParamVector,
    optim: OptimState,
    train_tel: Option<Telescope>,
    test_tel: Option<Telescope>,
    smoother: Option<SmootherState>,
    step: usize,
    batch_seed: u64,
    epoch: Option<(usize, Vec<usize>)>,
    last_gap: Option<f64>,
}

impl Run {
    pub fn new(spec: TrainSpec, train: Dataset, test: Dataset) -> Result<Self> {
        spec.validate()?;
        let params0 = build_network(&spec.arch, spec.init_seed, spec.init_scale)?;
        Self::from_params(spec, train, test, params0)
    }

    /// Starts from given initial parameters, e.g. a pretrained network.
    pub fn from_params(
        spec: TrainSpec,
        train: Dataset,
        test: Dataset,
        params0: ParamVector,
    ) -> Result<Self> {
        spec.validate()?;
        let net = Network::new(spec.arch.clone())?;
        if params0.layout() != net.layout() {
            return Err(Error::LayoutMismatch);
        }
        if train.is_empty() {
            return Err(Error::InsufficientData("training set is empty".into()));
        }
        for ds in [&train, &test] {
            if ds.dim() != spec.arch.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: spec.arch.input_dim,
                    got: ds.dim(),
                });
            }
        }
        let k = match spec.tracking.test_rows {
            0 => test.len(),
            k => k.min(test.len()),
        };
        let tracked = test.inputs.slice(ndarray::s![..k, ..]).to_owned();
        let tr = &spec.tracking;
        if (tr.telescope || tr.smoother) && k == 0 {
            return Err(Error::InsufficientData(
                "tracking needs at least one test row".into(),
            ));
        }
        let test_tel = (tr.telescope || tr.smoother)
            .then(|| Telescope::new(&net, &params0, tracked.view(), tr.space))
            .transpose()?;
        let train_tel = tr
            .smoother
            .then(|| Telescope::new(&net, &params0, train.inputs.view(), tr.space))
            .transpose()?;
        let smoother = match (&train_tel, &test_tel) {
            (Some(a), Some(b)) => Some(SmootherState::new(
                &train.targets,
                &a.trace().f_true,
                &b.trace().f_true,
                &params0,
                &spec.optim,
                tr.smoother_budget,
            )?),
            _ => None,
        };
        Ok(Run {
            optim: OptimState::new(params0.len()),
            batch_seed: spec.batch_seed,
            params: params0.clone(),
            params0,
            spec,
            net,
            train,
            test,
            tracked,
            train_tel,
            test_tel,
            smoother,
            step: 0,
            epoch: None,
            last_gap: None,
        })
    }

    pub fn spec(&self) -> &TrainSpec {
        &self.spec
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params0(&self) -> &ParamVector {
        &self.params0
    }

    pub fn optim_state(&self) -> &OptimState {
        &self.optim
    }

    pub fn smoother(&self) -> Option<&SmootherState> {
        self.smoother.as_ref()
    }

    pub fn test_telescope(&self) -> Option<&Telescope> {
        self.test_tel.as_ref()
    }

    pub fn train_data(&self) -> &Dataset {
        &self.train
    }

    pub fn test_data(&self) -> &Dataset {
        &self.test
    }

    pub fn tracked_inputs(&self) -> &Array2<f64> {
        &self.tracked
    }

    pub fn batch_seed(&self) -> u64 {
        self.batch_seed
    }

    /// Batch order from the next step on comes from `seed`.
    pub fn reseed_batches(&mut self, seed: u64) {
        self.batch_seed = seed;
        self.epoch = None;
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let n = self.train.len();
        let b = self.spec.batch_size;
        if b == 0 || b >= n {
            return (0..n).collect();
        }
        let per_epoch = n.div_ceil(b);
        let k = self.step;
        let epoch = k / per_epoch;
        if self.epoch.as_ref().is_none_or(|(e, _)| *e != epoch) {
            self.epoch = Some((epoch, epoch_permutation(n, self.batch_seed, epoch)));
        }
        let perm = &self.epoch.as_ref().expect("set above").1;
        let slot = k % per_epoch;
        perm[slot * b..((slot + 1) * b).min(n)].to_vec()
    }

    /// One optimizer step; trackers advance with it.
    pub fn step(&mut self) -> Result<()> {
        let batch = self.next_batch();
        let grad = batch_gradient(&self.net, &self.params, &self.train, &batch, self.spec.loss)?;
        let delta = self
            .optim
            .step(&self.spec.optim, &grad, self.params.values())?;
        if let (Some(sm), Some(tr), Some(te)) =
            (&mut self.smoother, &self.train_tel, &self.test_tel)
        {
            sm.step(&SmootherStep {
                net: &self.net,
                params_prev: &self.params,
                train_cache: tr.cache(),
                test_cache: Some(te.cache()),
                batch: &batch,
                gamma: self.optim.last_lr().expect("a step was taken"),
                phi: self.optim.scaling(),
            })?;
        }
        for tel in [&mut self.train_tel, &mut self.test_tel]
            .into_iter()
            .flatten()
        {
            tel.step(&delta)?;
        }
        self.params.add_assign(&delta)?;
        self.step += 1;
        if let (Some(sm), Some(tr), Some(te)) = (&self.smoother, &self.train_tel, &self.test_tel) {
            let gap = sm.invariant_gap(&tr.trace().f_tilde, &te.trace().f_tilde);
            self.last_gap = Some(gap);
            if !(gap <= self.spec.tracking.invariant_tol) {
                return Err(Error::InvariantViolation(format!(
                    "|S y + c - f_tilde| = {gap:e} at step {} exceeds {:e}",
                    self.step, self.spec.tracking.invariant_tol
                )));
            }
        }
        if self.params.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData(format!(
                "parameters diverged at step {}",
                self.step
            )));
        }
        Ok(())
    }

    pub fn evaluate_train(&self) -> Result<EvalMetrics> {
        evaluate(&self.net, &self.params, &self.train, self.spec.loss)
    }

    pub fn evaluate_test(&self) -> Result<EvalMetrics> {
        evaluate(&self.net, &self.params, &self.test, self.spec.loss)
    }

    /// Metrics at the current step; `wall_s` is supplied by the caller.
    pub fn metrics(&self, wall_s: f64) -> Result<MetricsRecord> {
        let tr = self.evaluate_train()?;
        let te = if self.test.is_empty() {
            EvalMetrics {
                loss: f64::NAN,
                mse: f64::NAN,
                err: None,
            }
        } else {
            self.evaluate_test()?
        };
        let (tilde, lin) = match &self.test_tel {
            Some(t) => {
                let (a, b) = approx_error(&t.trace())?;
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        let (p_train, p_test) = match &self.smoother {
            Some(s) => (Some(s.p_train()?), Some(s.p_test()?)),
            None => (None, None),
        };
        Ok(MetricsRecord {
            step: self.step,
            lr: self.spec.optim.lr.at(self.step.max(1)),
            train_loss: tr.loss,
            test_loss: te.loss,
            train_mse: tr.mse,
            test_mse: te.mse,
            train_err: tr.err,
            test_err: te.err,
            mean_abs_tilde: tilde,
            mean_abs_lin: lin,
            p_train,
            p_test,
            invariant_gap: self.last_gap,
            kernel_norm_train: None,
            kernel_norm_test: None,
            wall_s,
        })
    }

    /// Serializes the complete run state; `extra` is stored verbatim.
    pub fn checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "spec": serde_json::to_value(&self.spec)?,
            "batch_seed": self.batch_seed,
            "n_train": self.train.len(),
            "n_tracked": self.tracked.nrows(),
            "optim_t": self.optim.t,
            "last_lr": self.optim.last_lr(),
            "telescope_step": self.test_tel.as_ref().map(|t| t.step_count()),
            "smoother_t": self.smoother.as_ref().map(|s| s.t),
            "last_gap": self.last_gap,
            "extra": extra,
        });
        let mut c = Checkpoint::new(self.step, meta);
        c.push_vec("params0", self.params0.values())?;
        c.push_vec("params", self.params.values())?;
        c.push_vec("optim_m", &self.optim.m)?;
        c.push_vec("optim_v", &self.optim.v)?;
        if let Some(phi) = self.optim.scaling() {
            c.push_vec("optim_phi", phi)?;
        }
        for (name, tel) in [("train", &self.train_tel), ("test", &self.test_tel)] {
            if let Some(t) = tel {
                let st = t.state();
                c.push_vec(&format!("tel_{name}_tilde"), &st.f_tilde)?;
                c.push_vec(&format!("tel_{name}_lin"), &st.f_lin)?;
                c.push_vec(&format!("tel_{name}_incr"), &st.true_increments)?;
            }
        }
        if let Some(s) = &self.smoother {
            c.push_matrix("sm_s_train", &s.s_train)?;
            c.push_vec("sm_c_train", &s.c_train)?;
            c.push_matrix("sm_s_test", &s.s_test)?;
            c.push_vec("sm_c_test", &s.c_test)?;
            if let (Some(a), Some(b)) = (&s.u_s, &s.u_c) {
                c.push_matrix("sm_u_s", a)?;
                c.push_vec("sm_u_c", b)?;
            }
            if let (Some(a), Some(b)) = (&s.d_s, &s.d_c) {
                c.push_matrix("sm_d_s", a)?;
                c.push_vec("sm_d_c", b)?;
            }
        }
        Ok(c)
    }

    /// Rebuilds a run saved by [`Run::checkpoint`]; `spec` must match the saved one.
    pub fn from_checkpoint(
        spec: TrainSpec,
        train: Dataset,
        test: Dataset,
        ckpt: &Checkpoint,
    ) -> Result<Self> {
        let saved: TrainSpec = serde_json::from_value(ckpt.meta["spec"].clone())
            .map_err(|e| Error::Checkpoint(format!("unreadable spec in header: {e}")))?;
        if saved != spec {
            return Err(Error::Checkpoint(mismatch_message(&saved, &spec)));
        }
        let mut run = Run::new(spec, train, test)?;
        if ckpt.meta["n_train"].as_u64() != Some(run.train.len() as u64)
            || ckpt.meta["n_tracked"].as_u64() != Some(run.tracked.nrows() as u64)
        {
            return Err(Error::Checkpoint(
                "dataset sizes differ from the checkpoint".into(),
            ));
        }
        let layout = run.net.layout().clone();
        run.params0 = ParamVector::new(ckpt.get_vec("params0")?, layout.clone())?;
        run.params = ParamVector::new(ckpt.get_vec("params")?, layout)?;
        let optim_t = meta_usize(ckpt, "optim_t")?;
        let phi = ckpt
            .has("optim_phi")
            .then(|| ckpt.get_vec("optim_phi"))
            .transpose()?;
        run.optim = OptimState::from_parts(
            optim_t,
            ckpt.get_vec("optim_m")?,
            ckpt.get_vec("optim_v")?,
            phi,
            ckpt.meta["last_lr"].as_f64(),
        )?;
        run.step = ckpt.step;
        run.batch_seed = ckpt.meta["batch_seed"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("missing batch_seed".into()))?;
        run.last_gap = ckpt.meta["last_gap"].as_f64();
        let space = run.spec.tracking.space;
        let tel_step = ckpt.meta["telescope_step"].as_u64().unwrap_or(0) as usize;
        let restore =
            |name: &str, inputs: ndarray::ArrayView2<'_, f64>, run: &Run| -> Result<Telescope> {
                Telescope::restore(
                    &run.net,
                    &run.params0,
                    &run.params,
                    inputs,
                    space,
                    TelescopeState {
                        step: tel_step,
                        f_tilde: ckpt.get_vec(&format!("tel_{name}_tilde"))?,
                        f_lin: ckpt.get_vec(&format!("tel_{name}_lin"))?,
                        true_increments: ckpt.get_vec(&format!("tel_{name}_incr"))?,
                    },
                )
            };
        if run.train_tel.is_some() {
            run.train_tel = Some(restore("train", run.train.inputs.view(), &run)?);
        }
        if run.test_tel.is_some() {
            run.test_tel = Some(restore("test", run.tracked.view(), &run)?);
        }
        if run.smoother.is_some() {
            let pair = |a: &str, b: &str| -> Result<Option<(Array2<f64>, Vec<f64>)>> {
                if ckpt.has(a) {
                    Ok(Some((ckpt.get_matrix(a)?, ckpt.get_vec(b)?)))
                } else {
                    Ok(None)
                }
            };
            run.smoother = Some(SmootherState::from_parts(
                run.train.targets.clone(),
                &run.spec.optim,
                meta_usize(ckpt, "smoother_t")?,
                ckpt.get_matrix("sm_s_train")?,
                ckpt.get_vec("sm_c_train")?,
                ckpt.get_matrix("sm_s_test")?,
                ckpt.get_vec("sm_c_test")?,
                pair("sm_u_s", "sm_u_c")?,
                pair("sm_d_s", "sm_d_c")?,
            )?);
        }
        Ok(run)
    }
}

fn meta_usize(ckpt: &Checkpoint, key: &str) -> Result<usize> {
    ckpt.meta[key]
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::Checkpoint(format!("missing '{key}' in header")))
}

fn mismatch_message(saved: &TrainSpec, given: &TrainSpec) -> String {
    let a = serde_json::to_value(saved).unwrap_or_default();
    let b = serde_json::to_value(given).unwrap_or_default();
    let mut diffs = Vec::new();
    if let (Some(a), Some(b)) = (a.as_object(), b.as_object()) {
        for (k, v) in a {
            if b.get(k) != Some(v) {
                diffs.push(k.clone());
            }
        }
    }
    format!(
        "checkpoint was written for a different configuration (differs in: {})",
        diffs.join(", ")
    )
}
