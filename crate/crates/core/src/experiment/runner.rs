use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::s;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::boost::{fit_gbt, kernel_norm_ratio, relative_mse, GbtConfig};
use crate::checkpoint::Checkpoint;
use crate::data::{build_mixture_testset, shuffled_split, split_by_irregularity, Dataset};
use crate::error::{Error, Result};
use crate::lmc::{
    alpha_grid, barrier_scan, ensemble_eval, grad_drift_by_layer, spawn_and_train, BarrierReport,
    BaseRun, EnsembleMode, SpawnResult,
};
use crate::netcore::{GradSpace, Loss};
use crate::telescope::KernelSnapshot;
use crate::train::{evaluate, Run};

use super::config::{ExperimentConfig, ExperimentKind};
use super::datasets::{binary_task, load_datasets, tabular_pool};
use super::gnuplot::gnuplot_script;
use super::summary::{read_jsonl, summarize, Summary};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Also write `plot.gp` next to the summary.
    pub emit_gnuplot: bool,
    /// Print one progress line per log record to stderr.
    pub progress: bool,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub output_dir: PathBuf,
    pub logs: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub summary: Summary,
    pub plot: Option<PathBuf>,
}

/// One point of a sweep: optional width and step-size overrides.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    index: usize,
    width: Option<usize>,
    gamma: Option<f64>,
}

fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let widths: Vec<Option<usize>> = if cfg.experiment.kind == ExperimentKind::DoubleDescent {
        cfg.sweep.widths.iter().map(|&w| Some(w)).collect()
    } else {
        vec![None]
    };
    let gammas: Vec<Option<f64>> = if cfg.sweep.gammas.is_empty() {
        vec![None]
    } else {
        cfg.sweep.gammas.iter().map(|&g| Some(g)).collect()
    };
    let mut out = Vec::new();
    for &width in &widths {
        for &gamma in &gammas {
            out.push(Cell {
                index: out.len(),
                width,
                gamma,
            });
        }
    }
    out
}

/// Early-stopping bookkeeping, stored in checkpoints.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct EarlyStop {
    best_loss: Option<f64>,
    best_epoch: usize,
    stopped: bool,
}

pub fn log_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics-seed-{seed}.jsonl"))
}

fn checkpoint_path(dir: &Path, seed: u64, cell: usize, step: usize) -> PathBuf {
    dir.join(format!("ckpt-seed-{seed}-cell-{cell}-step-{step}.tlck"))
}

fn tagged(value: Value, seed: u64, cell: Option<&Cell>) -> Result<String> {
    let mut m = Map::new();
    m.insert("seed".into(), json!(seed));
    if let Some(c) = cell {
        m.insert("cell".into(), json!(c.index));
        if let Some(w) = c.width {
            m.insert("width".into(), json!(w));
        }
        if let Some(g) = c.gamma {
            m.insert("base_gamma".into(), json!(g));
        }
    }
    if let Value::Object(rest) = value {
        m.extend(rest);
    }
    Ok(serde_json::to_string(&Value::Object(m))?)
}

fn is_training_kind(kind: ExperimentKind) -> bool {
    matches!(
        kind,
        ExperimentKind::ApproxError | ExperimentKind::DoubleDescent | ExperimentKind::Grokking
    )
}

/// Runs every seed of `cfg` and writes logs, checkpoints and the summary.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    cfg.validate()?;
    let dir = &cfg.experiment.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    match cfg.experiment.kind {
        ExperimentKind::GbtCompare => run_gbt(cfg, opts)?,
        ExperimentKind::Lmc => run_lmc(cfg, opts)?,
        _ => {
            let (train, test) = load_datasets(cfg)?;
            for &seed in &cfg.experiment.seeds {
                run_seed(cfg, opts, seed, &train, &test)?;
            }
        }
    }
    finish(cfg, opts)
}

/// Continues a training-loop experiment from one of its checkpoints.
///
/// The checkpoint's seed log is cut back to the checkpoint step, the
/// interrupted cell continues, and the remaining cells and seeds rerun.
pub fn resume(checkpoint: &Path, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    cfg.validate()?;
    if !is_training_kind(cfg.experiment.kind) {
        return Err(Error::Config(format!(
            "the {} experiment cannot be resumed",
            cfg.experiment.kind.name()
        )));
    }
    let ck = Checkpoint::read(checkpoint)?;
    let extra = &ck.meta["extra"];
    let seed = extra["seed"]
        .as_u64()
        .ok_or_else(|| Error::Checkpoint("no seed recorded".into()))?;
    let cell_index = extra["cell"]
        .as_u64()
        .ok_or_else(|| Error::Checkpoint("no sweep cell recorded".into()))?
        as usize;
    let es: EarlyStop = serde_json::from_value(extra["early_stop"].clone()).unwrap_or_default();
    let seed_pos = cfg
        .experiment
        .seeds
        .iter()
        .position(|&s| s == seed)
        .ok_or_else(|| Error::Checkpoint(format!("seed {seed} is not part of this config")))?;
    let all_cells = cells(cfg);
    if cell_index >= all_cells.len() {
        return Err(Error::Checkpoint(format!(
            "sweep cell {cell_index} is not part of this config"
        )));
    }
    let (train, test) = load_datasets(cfg)?;
    let cell = all_cells[cell_index];
    let spec = cfg.train_spec(train.dim(), seed, cell.width, cell.gamma);
    let run = Run::from_checkpoint(spec, train.clone(), test.clone(), &ck)?;

    let dir = &cfg.experiment.output_dir;
    let path = log_path(dir, seed);
    let kept = if path.exists() {
        truncate_log(&path, cell_index, ck.step)?
    } else {
        String::new()
    };
    fs::write(&path, kept)?;
    let mut out = BufWriter::new(OpenOptions::new().append(true).open(&path)?);
    run_cell(cfg, opts, seed, &cell, run, &mut out, es, true)?;
    for c in &all_cells[cell_index + 1..] {
        let spec = cfg.train_spec(train.dim(), seed, c.width, c.gamma);
        run_cell(
            cfg,
            opts,
            seed,
            c,
            Run::new(spec, train.clone(), test.clone())?,
            &mut out,
            EarlyStop::default(),
            false,
        )?;
    }
    out.flush()?;
    drop(out);
    for &s in &cfg.experiment.seeds[seed_pos + 1..] {
        run_seed(cfg, opts, s, &train, &test)?;
    }
    finish(cfg, opts)
}

/// Lines of earlier cells plus lines of `cell` up to `step`.
fn truncate_log(path: &Path, cell: usize, step: usize) -> Result<String> {
    let text = fs::read_to_string(path)?;
    let mut kept = String::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line)?;
        let c = v["cell"].as_u64().unwrap_or(0) as usize;
        let t = v["step"].as_u64().unwrap_or(0) as usize;
        if c < cell || (c == cell && t <= step) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    Ok(kept)
}

fn run_seed(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    seed: u64,
    train: &Dataset,
    test: &Dataset,
) -> Result<()> {
    let path = log_path(&cfg.experiment.output_dir, seed);
    let mut out = BufWriter::new(File::create(&path)?);
    for cell in cells(cfg) {
        let spec = cfg.train_spec(train.dim(), seed, cell.width, cell.gamma);
        let run = Run::new(spec, train.clone(), test.clone())?;
        run_cell(
            cfg,
            opts,
            seed,
            &cell,
            run,
            &mut out,
            EarlyStop::default(),
            false,
        )?;
    }
    out.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    seed: u64,
    cell: &Cell,
    mut run: Run,
    out: &mut impl Write,
    mut es: EarlyStop,
    resumed: bool,
) -> Result<()> {
    let e = &cfg.experiment;
    let sw = &cfg.sweep;
    let n = run.train_data().len();
    let b = run.spec().batch_size;
    let per_epoch = if b == 0 || b >= n { 1 } else { n.div_ceil(b) };
    let watch = cfg.experiment.kind == ExperimentKind::DoubleDescent
        && (sw.stop_at_zero_train_err || sw.patience_epochs > 0);
    let start = Instant::now();
    let mut skip = resumed;
    loop {
        let t = run.step_count();
        let done = t >= e.steps || es.stopped;
        if !skip {
            if t % e.log_every == 0 || done {
                let rec = run.metrics(start.elapsed().as_secs_f64())?;
                if opts.progress {
                    eprintln!(
                        "seed {seed} cell {} step {t}: train mse {:.4e}, test mse {:.4e}",
                        cell.index, rec.train_mse, rec.test_mse
                    );
                }
                writeln!(
                    out,
                    "{}",
                    tagged(serde_json::to_value(&rec)?, seed, Some(cell))?
                )?;
            }
            if t > 0 && e.checkpoint_steps.contains(&t) {
                out.flush()?;
                let extra = json!({ "seed": seed, "cell": cell.index, "early_stop": es });
                run.checkpoint(extra)?.write(&checkpoint_path(
                    &e.output_dir,
                    seed,
                    cell.index,
                    t,
                ))?;
            }
        }
        skip = false;
        if done {
            break;
        }
        run.step()?;
        let t = run.step_count();
        if watch && t % per_epoch == 0 {
            let m = run.evaluate_train()?;
            let epoch = t / per_epoch;
            if sw.stop_at_zero_train_err && m.err == Some(0.0) {
                es.stopped = true;
            }
            if sw.patience_epochs > 0 {
                match es.best_loss {
                    Some(best) if m.loss >= best - sw.min_delta => {
                        if epoch - es.best_epoch >= sw.patience_epochs {
                            es.stopped = true;
                        }
                    }
                    _ => {
                        es.best_loss = Some(m.loss);
                        es.best_epoch = epoch;
                    }
                }
            }
        }
    }
    Ok(())
}

fn summary_keys(kind: ExperimentKind) -> (&'static [&'static str], bool) {
    match kind {
        ExperimentKind::ApproxError => (&["cell", "base_gamma", "step"], false),
        ExperimentKind::DoubleDescent => (&["cell", "width", "base_gamma"], true),
        ExperimentKind::Grokking => (&["step"], false),
        ExperimentKind::GbtCompare => (&["p"], false),
        ExperimentKind::Lmc => (&["t_spawn"], false),
    }
}

/// Summary over the seed logs currently present in the output directory.
pub fn summary_for(cfg: &ExperimentConfig) -> Result<(Summary, Vec<PathBuf>)> {
    let mut logs = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let p = log_path(&cfg.experiment.output_dir, seed);
        if p.exists() {
            per_seed.push(read_jsonl(&p)?);
            logs.push(p);
        }
    }
    let (keys, last) = summary_keys(cfg.experiment.kind);
    Ok((summarize(&per_seed, keys, last), logs))
}

fn finish(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let dir = cfg.experiment.output_dir.clone();
    let (summary, logs) = summary_for(cfg)?;
    let summary_path = dir.join("summary.csv");
    fs::write(&summary_path, summary.to_csv())?;
    let plot = if opts.emit_gnuplot {
        let p = dir.join("plot.gp");
        fs::write(&p, gnuplot_script(cfg.experiment.kind))?;
        Some(p)
    } else {
        None
    };
    Ok(Outcome {
        output_dir: dir,
        logs,
        summary_path,
        summary,
        plot,
    })
}

fn min_max(norms: &[Vec<f64>]) -> (f64, f64) {
    norms
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

fn run_gbt(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<()> {
    let d = &cfg.dataset;
    let g = &cfg.gbt;
    let dir = &cfg.experiment.output_dir;
    let (pool, manifest) = tabular_pool(cfg)?;
    if let Some(m) = manifest {
        fs::write(dir.join("manifest.json"), m.to_json()?)?;
    }
    let (regular_idx, irregular_idx) =
        split_by_irregularity(pool.inputs.view(), g.irregular_fraction)?;
    let regular = pool.select(&regular_idx);
    let irregular = pool.select(&irregular_idx).with_split("irregular");
    if d.n_train >= regular.len() {
        return Err(Error::InsufficientData(format!(
            "{} training rows requested, {} regular rows available",
            d.n_train,
            regular.len()
        )));
    }
    let (tr, rest) = shuffled_split(regular.len(), d.n_train, d.seed)?;
    let train = regular.select(&tr).with_split("train");
    let regular_test = regular.select(&rest).with_split("regular");
    let gbt_cfg = GbtConfig {
        n_stages: g.n_stages,
        max_depth: g.max_depth,
        learning_rate: g.learning_rate,
    };
    let ens = fit_gbt(train.inputs.view(), &train.targets, &gbt_cfg)?;
    let gbt_train_norms = ens.kernel_row_norms(train.inputs.view());
    let steps = cfg.experiment.steps;
    let mut snaps: Vec<usize> = (1..=g.kernel_snapshots)
        .map(|k| (k * steps / g.kernel_snapshots).max(1))
        .collect();
    snaps.dedup();

    for &seed in &cfg.experiment.seeds {
        let mixtures: Vec<Dataset> = g
            .proportions
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                build_mixture_testset(
                    &regular_test,
                    &irregular,
                    p,
                    g.mixture_size,
                    d.seed ^ seed.rotate_left(17) ^ k as u64,
                )
            })
            .collect::<Result<_>>()?;
        let spec = cfg.train_spec(train.dim(), seed, None, None);
        let mut run = Run::new(spec, train.clone(), mixtures[0].clone())?;
        let mut nn_test: Vec<Vec<Vec<f64>>> = vec![Vec::new(); mixtures.len()];
        let mut nn_train: Vec<Vec<f64>> = Vec::new();
        let mut trace = BufWriter::new(File::create(dir.join(format!("nn-seed-{seed}.jsonl")))?);
        let start = Instant::now();
        while run.step_count() < steps {
            let t = run.step_count() + 1;
            if snaps.contains(&t) {
                let norms = |q: &ndarray::Array2<f64>| -> Result<Vec<f64>> {
                    let k = KernelSnapshot::compute(
                        run.net(),
                        run.params(),
                        q.view(),
                        train.inputs.view(),
                        None,
                        GradSpace::Output,
                        t,
                    )?;
                    Ok(k.row_norms())
                };
                nn_train.push(norms(&train.inputs)?);
                for (k, m) in mixtures.iter().enumerate() {
                    nn_test[k].push(norms(&m.inputs)?);
                }
                let mut rec = run.metrics(start.elapsed().as_secs_f64())?;
                rec.kernel_norm_train = nn_train
                    .last()
                    .map(|v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                rec.kernel_norm_test = nn_test[0]
                    .last()
                    .map(|v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                writeln!(
                    trace,
                    "{}",
                    tagged(serde_json::to_value(&rec)?, seed, None)?
                )?;
            }
            run.step()?;
        }
        trace.flush()?;

        let mut out = BufWriter::new(File::create(log_path(dir, seed))?);
        let mut base: Option<(f64, f64)> = None;
        for (k, m) in mixtures.iter().enumerate() {
            let nn_mse = evaluate(run.net(), run.params(), m, Loss::Squared)?.mse;
            let pred = ens.predict_rows(m.inputs.view());
            let gbt_mse = pred
                .iter()
                .zip(&m.targets)
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>()
                / m.len() as f64;
            let (nn0, gbt0) = *base.get_or_insert((nn_mse, gbt_mse));
            let gbt_test_norms = ens.kernel_row_norms(m.inputs.view());
            let (lo, hi) = min_max(&gbt_test_norms);
            let (tlo, thi) = min_max(&gbt_train_norms);
            let line = json!({
                "p": g.proportions[k],
                "nn_mse": nn_mse,
                "gbt_mse": gbt_mse,
                "rel_mse": relative_mse(nn_mse, gbt_mse, nn0, gbt0)?,
                "nn_ratio": kernel_norm_ratio(&nn_test[k], &nn_train)?,
                "gbt_ratio": kernel_norm_ratio(&gbt_test_norms, &gbt_train_norms)?,
                "gbt_test_norm_min": lo,
                "gbt_test_norm_max": hi,
                "gbt_train_norm_min": tlo,
                "gbt_train_norm_max": thi,
                "norm_floor": 1.0 / (train.len() as f64).sqrt(),
            });
            if opts.progress {
                eprintln!("seed {seed} p {}: {line}", g.proportions[k]);
            }
            writeln!(out, "{}", tagged(line, seed, None)?)?;
        }
        out.flush()?;
    }
    Ok(())
}

fn run_lmc(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<()> {
    let d = &cfg.dataset;
    let l = &cfg.lmc;
    let dir = &cfg.experiment.output_dir;
    let steps = cfg.experiment.steps;
    let (train, test) = load_datasets(cfg)?;
    let pretrain = match l.pretrain_classes {
        Some(c) if l.pretrain_steps > 0 => Some(binary_task(d, c)?),
        _ => None,
    };
    let per_epoch = match cfg.optim.batch_size {
        0 => 1,
        b if b >= train.len() => 1,
        b => train.len().div_ceil(b),
    };
    let horizon = if l.horizon == 0 { per_epoch } else { l.horizon };
    let mut keep: Vec<usize> = l.spawn_steps.clone();
    keep.extend(
        l.spawn_steps
            .iter()
            .map(|t| t + horizon)
            .filter(|&t| t <= steps),
    );
    keep.sort_unstable();
    keep.dedup();
    let last_keep = keep.last().copied().unwrap_or(0);
    let alphas = alpha_grid(l.alpha_points);
    let k = l.drift_subset.min(test.len());
    let drift_x = test.inputs.slice(s![..k, ..]).to_owned();

    for &seed in &cfg.experiment.seeds {
        let spec = cfg.train_spec(train.dim(), seed, None, None);
        let start = match &pretrain {
            Some((ptrain, ptest)) => {
                let mut pre = Run::new(spec.clone(), ptrain.clone(), ptest.clone())?;
                while pre.step_count() < l.pretrain_steps {
                    pre.step()?;
                }
                Run::from_params(
                    spec.clone(),
                    train.clone(),
                    test.clone(),
                    pre.params().clone(),
                )?
            }
            None => Run::new(spec.clone(), train.clone(), test.clone())?,
        };
        let base = BaseRun::record(start, last_keep, &keep)?;
        let net = crate::netcore::Network::new(spec.arch.clone())?;
        let mix = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let (sa, sb) = (l.child_seeds[0] ^ mix, l.child_seeds[1] ^ mix);
        let mut report = BarrierReport::default();
        let mut out = BufWriter::new(File::create(log_path(dir, seed))?);
        for &t in &l.spawn_steps {
            let (a, b) = spawn_and_train(&base, t, steps, sa, sb)?;
            let scan = barrier_scan(&net, &a, &b, &alphas, &test, spec.loss)?;
            let drift = if t + horizon <= steps {
                let before = base.restore(t)?;
                let after = base.restore(t + horizon)?;
                grad_drift_by_layer(&net, before.params(), after.params(), drift_x.view())?
            } else {
                vec![f64::NAN; net.num_layers()]
            };
            let pred = ensemble_eval(
                &net,
                &a,
                &b,
                0.5,
                &test,
                EnsembleMode::PredictionAvg,
                spec.loss,
            )?;
            let pre = ensemble_eval(
                &net,
                &a,
                &b,
                0.5,
                &test,
                EnsembleMode::PreactivationAvg,
                spec.loss,
            )?;
            let end_a = scan.rows.last().copied();
            let end_b = scan.rows.first().copied();
            let mut line = json!({
                "t_spawn": t,
                "barrier": scan.barrier,
                "accuracy_gap": scan.accuracy_gap,
                "loss_a": end_a.map(|r| r.loss_lmc),
                "loss_b": end_b.map(|r| r.loss_lmc),
                "acc_a": end_a.map(|r| r.acc_lmc),
                "acc_b": end_b.map(|r| r.acc_lmc),
                "ens_pred_loss": pred.loss,
                "ens_pred_err": pred.err,
                "ens_preact_loss": pre.loss,
                "ens_preact_err": pre.err,
                "drift_output": drift.last().copied(),
            });
            for (i, v) in drift.iter().enumerate() {
                line[format!("drift_layer_{i}")] = json!(v);
            }
            if opts.progress {
                eprintln!(
                    "seed {seed} spawn {t}: barrier {:.4e}, output drift {:.4e}",
                    scan.barrier,
                    drift.last().copied().unwrap_or(f64::NAN)
                );
            }
            writeln!(out, "{}", tagged(line, seed, None)?)?;
            report.entries.push(SpawnResult {
                t_spawn: t,
                scan,
                drift,
            });
        }
        out.flush()?;
        fs::write(
            dir.join(format!("barrier-seed-{seed}.csv")),
            report.to_csv(),
        )?;
        fs::write(
            dir.join(format!("drift-seed-{seed}.csv")),
            report.drift_csv(),
        )?;
    }
    Ok(())
}
