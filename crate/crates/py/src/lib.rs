//! Python bindings: datasets, instrumented training runs, boosted trees,
//! barrier scans and the config-driven experiment runner.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tlens_core::boost::{fit_gbt, kernel_norm_ratio, GbtConfig, TreeEnsemble};
use tlens_core::data::{self, Dataset};
use tlens_core::experiment::{self, ExperimentConfig, RunOptions};
use tlens_core::lmc::{alpha_grid, barrier_scan as scan};
use tlens_core::netcore::{ArchSpec, HiddenActivation, InitScheme, Loss, OutputActivation};
use tlens_core::optim::{LrSchedule, OptimConfig, OptimKind};
use tlens_core::smoother::DEFAULT_BUDGET;
use tlens_core::train::{Run, Tracking, TrainSpec};

fn err(e: tlens_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Array2::from_shape_vec((rows.len(), d), rows.concat())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows_of(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Inputs and targets of one split.
#[pyclass(name = "Dataset", module = "tlens", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (inputs, targets, split = "train"))]
    fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>, split: &str) -> PyResult<Self> {
        let inner = Dataset::new(matrix(&inputs)?, targets, split, "python").map_err(err)?;
        Ok(PyDataset { inner })
    }

    /// Rendered digit images of two classes, downsampled, as `(train, test)`.
    #[staticmethod]
    #[pyo3(signature = (classes, n_train, n_test, downsample = (8, 8), seed = 0))]
    fn synthetic_digits(
        classes: (u8, u8),
        n_train: usize,
        n_test: usize,
        downsample: (usize, usize),
        seed: u64,
    ) -> PyResult<(Self, Self)> {
        let per_class = (n_train - n_train / 2) + (n_test - n_test / 2);
        let raw = data::synthetic_digit_images(&[classes.0, classes.1], per_class, seed);
        let (a, b) = data::make_binary_task(
            &raw, classes.0, classes.1, n_train, n_test, downsample, seed,
        )
        .map_err(err)?;
        Ok((PyDataset { inner: a }, PyDataset { inner: b }))
    }

    /// Two classes of 1-D digit-template signals as `(train, test)`.
    #[staticmethod]
    #[pyo3(signature = (classes = (0, 1), n_train = 800, n_test = 1000, seed = 42))]
    fn mnist1d(
        classes: (u8, u8),
        n_train: usize,
        n_test: usize,
        seed: u64,
    ) -> PyResult<(Self, Self)> {
        let cfg = data::Mnist1dConfig {
            class_a: classes.0,
            class_b: classes.1,
            n_train,
            n_test,
            seed,
        };
        let (a, b) = data::mnist1d_binary_task(&cfg).map_err(err)?;
        Ok((PyDataset { inner: a }, PyDataset { inner: b }))
    }

    /// Quadratic single-index regression as `(train, test)`.
    #[staticmethod]
    #[pyo3(signature = (dim, n_train, n_test, seed = 0))]
    fn polynomial(dim: usize, n_train: usize, n_test: usize, seed: u64) -> PyResult<(Self, Self)> {
        let t = data::polynomial_task(dim, n_train, n_test, seed).map_err(err)?;
        Ok((PyDataset { inner: t.train }, PyDataset { inner: t.test }))
    }

    /// Copy with exactly `floor(rate * n)` binary labels flipped.
    fn with_label_noise(&self, rate: f64, seed: u64) -> PyResult<Self> {
        Ok(PyDataset {
            inner: data::add_label_noise(&self.inner, rate, seed).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn inputs(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.inputs)
    }

    #[getter]
    fn targets(&self) -> Vec<f64> {
        self.inner.targets.clone()
    }
}

fn optim_kind(s: &str) -> PyResult<OptimKind> {
    Ok(match s {
        "sgd" => OptimKind::Sgd,
        "momentum" => OptimKind::Momentum,
        "weight_decay" => OptimKind::WeightDecay,
        "adamw" => OptimKind::Adamw,
        _ => return Err(PyValueError::new_err(format!("unknown optimizer '{s}'"))),
    })
}

/// One seeded training run with optional telescoping and smoother tracking.
#[pyclass(name = "Trainer", module = "tlens")]
struct PyTrainer {
    run: Run,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (
        train, test, hidden, activation = "relu", eps = 0.0, output = "identity", optimizer = "sgd",
        gamma = 1e-3, beta1 = 0.9, beta2 = 0.999, lam = 0.0, adam_eps = 1e-8, loss = "squared",
        batch_size = 0, seed = 0, init_scale = 1.0, telescope = false, smoother = false, test_rows = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        train: &PyDataset,
        test: &PyDataset,
        hidden: Vec<usize>,
        activation: &str,
        eps: f64,
        output: &str,
        optimizer: &str,
        gamma: f64,
        beta1: f64,
        beta2: f64,
        lam: f64,
        adam_eps: f64,
        loss: &str,
        batch_size: usize,
        seed: u64,
        init_scale: f64,
        telescope: bool,
        smoother: bool,
        test_rows: usize,
    ) -> PyResult<Self> {
        let mut arch = ArchSpec::relu_mlp(train.inner.dim(), &hidden);
        match activation {
            "relu" => {}
            "quadratic" => {
                arch.hidden_activation = HiddenActivation::CustomQuadratic { eps };
                arch.init = InitScheme::StandardNormal;
                arch.final_layer_trainable = false;
            }
            _ => {
                return Err(PyValueError::new_err(format!(
                    "unknown activation '{activation}'"
                )))
            }
        }
        arch.output_activation = match output {
            "identity" => OutputActivation::Identity,
            "sigmoid" => OutputActivation::Sigmoid,
            _ => return Err(PyValueError::new_err(format!("unknown output '{output}'"))),
        };
        let loss = match loss {
            "squared" => Loss::Squared,
            "bce" => Loss::Bce,
            _ => return Err(PyValueError::new_err(format!("unknown loss '{loss}'"))),
        };
        let spec = TrainSpec {
            arch,
            init_seed: seed,
            init_scale,
            optim: OptimConfig {
                kind: optim_kind(optimizer)?,
                lr: LrSchedule::constant(gamma),
                beta1,
                beta2,
                lambda: lam,
                eps: adam_eps,
            },
            loss,
            batch_size,
            batch_seed: experiment::batch_seed(seed),
            tracking: Tracking {
                telescope,
                smoother,
                test_rows,
                smoother_budget: DEFAULT_BUDGET,
                ..Tracking::default()
            },
        };
        let run = Run::new(spec, train.inner.clone(), test.inner.clone()).map_err(err)?;
        Ok(PyTrainer { run })
    }

    /// Takes `n` optimizer steps.
    #[pyo3(signature = (n = 1))]
    fn step(&mut self, n: usize) -> PyResult<()> {
        for _ in 0..n {
            self.run.step().map_err(err)?;
        }
        Ok(())
    }

    #[getter]
    fn step_count(&self) -> usize {
        self.run.step_count()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.run.params().values().to_vec()
    }

    /// Current metric record as a dict; absent fields are omitted.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = self.run.metrics(0.0).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("step", m.step)?;
        d.set_item("lr", m.lr)?;
        d.set_item("train_loss", m.train_loss)?;
        d.set_item("test_loss", m.test_loss)?;
        d.set_item("train_mse", m.train_mse)?;
        d.set_item("test_mse", m.test_mse)?;
        for (k, v) in [
            ("train_err", m.train_err),
            ("test_err", m.test_err),
            ("mean_abs_tilde", m.mean_abs_tilde),
            ("mean_abs_lin", m.mean_abs_lin),
            ("p_train", m.p_train),
            ("p_test", m.p_test),
            ("invariant_gap", m.invariant_gap),
        ] {
            if let Some(v) = v {
                d.set_item(k, v)?;
            }
        }
        Ok(d)
    }

    /// Outputs of the current model on `rows`.
    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        rows.iter()
            .map(|r| self.run.net().predict(self.run.params(), r).map_err(err))
            .collect()
    }

    /// Writes the full run state to `path`.
    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        self.run
            .checkpoint(serde_json::Value::Null)
            .and_then(|c| c.write(&path))
            .map_err(err)
    }
}

/// Gradient-boosted regression trees with explicit tree kernels.
#[pyclass(name = "GradientBoosting", module = "tlens")]
struct PyGbt {
    cfg: GbtConfig,
    model: Option<TreeEnsemble>,
}

impl PyGbt {
    fn model(&self) -> PyResult<&TreeEnsemble> {
        self.model
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("call fit() first"))
    }
}

#[pymethods]
impl PyGbt {
    #[new]
    #[pyo3(signature = (n_stages = 200, max_depth = 3, learning_rate = 0.1))]
    fn new(n_stages: usize, max_depth: usize, learning_rate: f64) -> Self {
        PyGbt {
            cfg: GbtConfig {
                n_stages,
                max_depth,
                learning_rate,
            },
            model: None,
        }
    }

    fn fit(&mut self, train: &PyDataset) -> PyResult<()> {
        self.model =
            Some(fit_gbt(train.inner.inputs.view(), &train.inner.targets, &self.cfg).map_err(err)?);
        Ok(())
    }

    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.model()?.predict_rows(matrix(&rows)?.view()))
    }

    /// Tree-kernel row norms indexed `[stage][row]`.
    fn kernel_row_norms(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.model()?.kernel_row_norms(matrix(&rows)?.view()))
    }
}

/// Mean-over-stages of the largest test kernel-row norm over the same for train.
#[pyfunction]
fn norm_ratio(test_norms: Vec<Vec<f64>>, train_norms: Vec<Vec<f64>>) -> PyResult<f64> {
    kernel_norm_ratio(&test_norms, &train_norms).map_err(err)
}

/// Loss barrier between two runs of the same architecture on `eval`.
#[pyfunction]
#[pyo3(signature = (a, b, eval, alpha_points = 30))]
fn barrier_scan<'py>(
    py: Python<'py>,
    a: &PyTrainer,
    b: &PyTrainer,
    eval: &PyDataset,
    alpha_points: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let s = scan(
        a.run.net(),
        a.run.params(),
        b.run.params(),
        &alpha_grid(alpha_points),
        &eval.inner,
        a.run.spec().loss,
    )
    .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("barrier", s.barrier)?;
    d.set_item("accuracy_gap", s.accuracy_gap)?;
    d.set_item("alpha", s.rows.iter().map(|r| r.alpha).collect::<Vec<_>>())?;
    d.set_item(
        "loss_lmc",
        s.rows.iter().map(|r| r.loss_lmc).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "loss_avg",
        s.rows.iter().map(|r| r.loss_avg).collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// Validates a TOML experiment config; raises on any problem.
#[pyfunction]
fn validate_config(path: PathBuf) -> PyResult<String> {
    let cfg = ExperimentConfig::load(&path).map_err(err)?;
    cfg.validate().map_err(err)?;
    Ok(cfg.experiment.kind.name().to_string())
}

/// Runs a TOML experiment config and returns the summary CSV path.
#[pyfunction]
#[pyo3(signature = (path, emit_gnuplot = false))]
fn run_experiment(path: PathBuf, emit_gnuplot: bool) -> PyResult<PathBuf> {
    let cfg = ExperimentConfig::load(&path).map_err(err)?;
    let out = experiment::run(
        &cfg,
        &RunOptions {
            emit_gnuplot,
            progress: false,
        },
    )
    .map_err(err)?;
    Ok(out.summary_path)
}

#[pymodule]
fn tlens(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainer>()?;
    m.add_class::<PyGbt>()?;
    m.add_function(wrap_pyfunction!(norm_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(barrier_scan, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
