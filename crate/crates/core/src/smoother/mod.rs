//! Smoother form of the telescoped model under squared loss.
//!
//! Every tracked prediction is kept as `f̃_t(x) = s_t(x)·y + c_t(x)`, with
//! `s_t(x)` a weight vector over the training labels. Writing the true
//! training predictions as `f_{t-1} = S_{t-1}y + ĉ_{t-1}` (so `ĉ` absorbs the
//! gap between `f` and `f̃`), the raw batch gradient splits as
//! `T_t g_t = -T_t(I - S)y + T_t ĉ`, and every optimizer update becomes
//! `Δθ_t = γ_t (U^S_t y + U^C_t)` with
//!
//! | kind           | `U^S_t`                                   | `U^C_t`                                   |
//! |----------------|-------------------------------------------|-------------------------------------------|
//! | `sgd`          | `T(I-S)`                                  | `-Tĉ`                                     |
//! | `momentum`     | `Ũ^S_t/(1-β₁ᵗ)`                           | `Ũ^C_t/(1-β₁ᵗ)`                           |
//! | `weight_decay` | `T(I-S) - λD^S_t`                         | `-Tĉ - λD^C_t`                            |
//! | `adamw`        | `diag(1/φ)Ũ^S_t/(1-β₁ᵗ) - λD^S_t`         | `diag(1/φ)Ũ^C_t/(1-β₁ᵗ) - λD^C_t`         |
//!
//! where `Ũ^S_t = β₁Ũ^S_{t-1} + (1-β₁)T(I-S)`, `Ũ^C_t = β₁Ũ^C_{t-1} - (1-β₁)Tĉ`,
//! and `θ_{t-1} = D^S_t y + D^C_t` is advanced by `D_{t+1} = D_t + γ_t U_t`
//! from `D^S_1 = 0`, `D^C_1 = θ_0`. Each tracked row then moves by
//! `Δs_t(x) = γ_t ∇f(x)ᵀU^S_t` and `Δc_t(x) = γ_t ∇f(x)ᵀU^C_t`.
//!
//! Plain SGD never needs the `p × n` buffers: the kernel row `∇f(x)ᵀT_t` is
//! formed first and multiplied into `(I - S)` directly.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::netcore::{ForwardCache, GradSpace, Loss, Network, ParamVector};
use crate::optim::{OptimConfig, OptimKind};

/// Default limit on `buffers × p × n` stored entries.
pub const DEFAULT_BUDGET: usize = 200_000_000;

/// Everything the smoother consumes for step `t`, all evaluated at `θ_{t-1}`.
pub struct SmootherStep<'a> {
    pub net: &'a Network,
    pub params_prev: &'a ParamVector,
    /// Forward cache of the full training set.
    pub train_cache: &'a ForwardCache,
    /// Forward cache of the tracked test rows, if any.
    pub test_cache: Option<&'a ForwardCache>,
    pub batch: &'a [usize],
    pub gamma: f64,
    /// `φ_t` of the adaptive step, required for `adamw`.
    pub phi: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherState {
    pub s_train: Array2<f64>,
    pub c_train: Vec<f64>,
    pub s_test: Array2<f64>,
    pub c_test: Vec<f64>,
    /// Momentum buffers `Ũ^S` (`p × n`) and `Ũ^C`.
    pub u_s: Option<Array2<f64>>,
    pub u_c: Option<Vec<f64>>,
    /// Decay buffers `D^S` (`p × n`) and `D^C`, representing `θ_{t-1}`.
    pub d_s: Option<Array2<f64>>,
    pub d_c: Option<Vec<f64>>,
    pub t: usize,
    y: Vec<f64>,
    kind: OptimKind,
    beta1: f64,
    lambda: f64,
}

/// Whether a run with this loss and optimizer can carry a smoother.
pub fn check_supported(loss: Loss, output_dim: usize) -> Result<()> {
    if loss != Loss::Squared {
        return Err(Error::SmootherUnsupported(
            "losses other than squared error".into(),
        ));
    }
    if output_dim != 1 {
        return Err(Error::SmootherUnsupported("multi-output heads".into()));
    }
    Ok(())
}

/// Number of `p × n` buffers an optimizer kind needs.
pub fn buffers_needed(kind: OptimKind) -> usize {
    match kind {
        OptimKind::Sgd => 0,
        OptimKind::Momentum | OptimKind::WeightDecay => 1,
        OptimKind::Adamw => 2,
    }
}

impl SmootherState {
    /// `S = 0`, `c = f_{θ_0}`, empty momentum buffers, `D^S = 0`, `D^C = θ_0`.
    pub fn new(
        y: &[f64],
        f0_train: &[f64],
        f0_test: &[f64],
        params0: &ParamVector,
        optim: &OptimConfig,
        budget: usize,
    ) -> Result<Self> {
        let n = y.len();
        if f0_train.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: f0_train.len(),
            });
        }
        let p = params0.len();
        let required = buffers_needed(optim.kind)
            .saturating_mul(p)
            .saturating_mul(n);
        if required > budget {
            return Err(Error::MemoryBudget { required, budget });
        }
        let momentum = optim.kind.uses_momentum();
        let decay = optim.kind.uses_decay();
        Ok(SmootherState {
            s_train: Array2::zeros((n, n)),
            c_train: f0_train.to_vec(),
            s_test: Array2::zeros((f0_test.len(), n)),
            c_test: f0_test.to_vec(),
            u_s: momentum.then(|| Array2::zeros((p, n))),
            u_c: momentum.then(|| vec![0.0; p]),
            d_s: decay.then(|| Array2::zeros((p, n))),
            d_c: decay.then(|| params0.values().to_vec()),
            t: 0,
            y: y.to_vec(),
            kind: optim.kind,
            beta1: optim.beta1,
            lambda: optim.lambda,
        })
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn kind(&self) -> OptimKind {
        self.kind
    }

    pub fn n_train(&self) -> usize {
        self.y.len()
    }

    /// `S y + c` on the training rows.
    pub fn train_predictions(&self) -> Vec<f64> {
        apply_rows(self.s_train.view(), &self.c_train, &self.y)
    }

    /// `S y + c` on the tracked test rows.
    pub fn test_predictions(&self) -> Vec<f64> {
        apply_rows(self.s_test.view(), &self.c_test, &self.y)
    }

    pub fn p_train(&self) -> Result<f64> {
        effective_params(self.s_train.view(), self.n_train())
    }

    pub fn p_test(&self) -> Result<f64> {
        effective_params(self.s_test.view(), self.n_train())
    }

    /// Advances every row and buffer by one optimizer step. Returns the
    /// update `γ(U^S y + U^C)` implied by the recursion, which matches the
    /// optimizer's `Δθ` up to rounding (`None` on the buffer-free SGD path).
    pub fn step(&mut self, ctx: &SmootherStep<'_>) -> Result<Option<Vec<f64>>> {
        let n = self.n_train();
        if ctx.train_cache.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: ctx.train_cache.len(),
            });
        }
        if ctx.batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for &i in ctx.batch {
            if i >= n {
                return Err(Error::IndexOutOfBounds { index: i, len: n });
            }
        }
        let m = self.c_test.len();
        if let Some(tc) = ctx.test_cache {
            if tc.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: tc.len(),
                });
            }
        } else if m > 0 {
            return Err(Error::InvalidConfig(
                "smoother tracks test rows but no test cache was given".into(),
            ));
        }
        if self.kind == OptimKind::Adamw && ctx.phi.is_none() {
            return Err(Error::ScalingUnavailable);
        }
        let t = self.t + 1;
        let gamma = ctx.gamma;
        let b = ctx.batch.len();
        let net = ctx.net;
        let space = GradSpace::Output;

        // ĉ = f_{t-1}(train) - S_{t-1} y and the batch rows of (I - S_{t-1}).
        let f_prev = ctx.train_cache.outputs(space);
        let sy = self.s_train.dot(&ArrayView1::from(&self.y));
        let c_hat: Vec<f64> = f_prev.iter().zip(sy.iter()).map(|(f, s)| f - s).collect();
        let mut resid_rows = self.s_train.select(Axis(0), ctx.batch);
        resid_rows.mapv_inplace(|v| -v);
        for (r, &i) in ctx.batch.iter().enumerate() {
            resid_rows[[r, i]] += 1.0;
        }
        let c_hat_b = Array1::from_iter(ctx.batch.iter().map(|&i| c_hat[i]));

        let train_f = net.factors(ctx.params_prev, ctx.train_cache, space)?;
        let test_f = match ctx.test_cache {
            Some(tc) if m > 0 => Some(net.factors(ctx.params_prev, tc, space)?),
            _ => None,
        };

        let implied = if self.kind == OptimKind::Sgd {
            let batch_f = Network::select_rows(&train_f, ctx.batch);
            let scale = gamma / b as f64;
            let k_train = Network::kernel(&train_f, &batch_f) * scale;
            let k_test = test_f
                .as_ref()
                .map(|tf| Network::kernel(tf, &batch_f) * scale);
            let ds_train = k_train.dot(&resid_rows);
            let dc_train = k_train.dot(&c_hat_b);
            if let Some(k) = &k_test {
                self.s_test += &k.dot(&resid_rows);
                for (c, d) in self.c_test.iter_mut().zip(k.dot(&c_hat_b).iter()) {
                    *c -= d;
                }
            }
            self.s_train += &ds_train;
            for (c, d) in self.c_train.iter_mut().zip(dc_train.iter()) {
                *c -= d;
            }
            None
        } else {
            let batch_f = Network::select_rows(&train_f, ctx.batch);
            let g_batch = net.grad_rows_from_factors(&batch_f);
            let inv_b = 1.0 / b as f64;
            // T(I - S) and Tĉ.
            let a_s = g_batch.t().dot(&resid_rows) * inv_b;
            let a_c = g_batch.t().dot(&c_hat_b) * inv_b;
            let (mut u_s, mut u_c) = match self.kind {
                OptimKind::Momentum | OptimKind::Adamw => {
                    let b1 = self.beta1;
                    let us = self.u_s.as_mut().expect("momentum buffer");
                    us.zip_mut_with(&a_s, |u, a| *u = b1 * *u + (1.0 - b1) * a);
                    let uc = self.u_c.as_mut().expect("momentum buffer");
                    for (u, a) in uc.iter_mut().zip(a_c.iter()) {
                        *u = b1 * *u - (1.0 - b1) * a;
                    }
                    let corr = 1.0 - b1.powi(t as i32);
                    let mut s = &*us / corr;
                    let mut c: Array1<f64> = uc.iter().map(|u| u / corr).collect();
                    if self.kind == OptimKind::Adamw {
                        let phi = ctx.phi.expect("checked above");
                        if phi.len() != c.len() {
                            return Err(Error::DimensionMismatch {
                                expected: c.len(),
                                got: phi.len(),
                            });
                        }
                        for (j, f) in phi.iter().enumerate() {
                            s.row_mut(j).mapv_inplace(|v| v / f);
                            c[j] /= f;
                        }
                    }
                    (s, c)
                }
                _ => (a_s, -a_c),
            };
            if self.kind.uses_decay() {
                let lam = self.lambda;
                let ds = self.d_s.as_mut().expect("decay buffer");
                let dc = self.d_c.as_mut().expect("decay buffer");
                u_s.zip_mut_with(ds, |u, d| *u -= lam * d);
                for (u, d) in u_c.iter_mut().zip(dc.iter()) {
                    *u -= lam * d;
                }
                ds.zip_mut_with(&u_s, |d, u| *d += gamma * u);
                for (d, u) in dc.iter_mut().zip(u_c.iter()) {
                    *d += gamma * u;
                }
            }
            let g_train = net.grad_rows_from_factors(&train_f);
            if let Some(tf) = &test_f {
                let g_test = net.grad_rows_from_factors(tf);
                self.s_test.scaled_add(gamma, &g_test.dot(&u_s));
                for (c, d) in self.c_test.iter_mut().zip(g_test.dot(&u_c).iter()) {
                    *c += gamma * d;
                }
            }
            self.s_train.scaled_add(gamma, &g_train.dot(&u_s));
            for (c, d) in self.c_train.iter_mut().zip(g_train.dot(&u_c).iter()) {
                *c += gamma * d;
            }
            let implied = (u_s.dot(&ArrayView1::from(&self.y)) + &u_c) * gamma;
            Some(implied.to_vec())
        };
        self.t = t;
        Ok(implied)
    }

    /// Largest `|S y + c − f̃|` over the train rows and the tracked test rows.
    pub fn invariant_gap(&self, f_tilde_train: &[f64], f_tilde_test: &[f64]) -> f64 {
        let a = self.train_predictions();
        let b = self.test_predictions();
        a.iter()
            .zip(f_tilde_train)
            .chain(b.iter().zip(f_tilde_test))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// Restores a state from its parts, e.g. when reading a checkpoint.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        y: Vec<f64>,
        optim: &OptimConfig,
        t: usize,
        s_train: Array2<f64>,
        c_train: Vec<f64>,
        s_test: Array2<f64>,
        c_test: Vec<f64>,
        u: Option<(Array2<f64>, Vec<f64>)>,
        d: Option<(Array2<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        let n = y.len();
        if s_train.dim() != (n, n)
            || c_train.len() != n
            || s_test.ncols() != n
            || s_test.nrows() != c_test.len()
        {
            return Err(Error::Checkpoint(
                "smoother matrices have inconsistent shapes".into(),
            ));
        }
        if u.is_some() != optim.kind.uses_momentum() || d.is_some() != optim.kind.uses_decay() {
            return Err(Error::Checkpoint(
                "smoother buffers do not match the optimizer".into(),
            ));
        }
        let (u_s, u_c) = match u {
            Some((a, b)) => (Some(a), Some(b)),
            None => (None, None),
        };
        let (d_s, d_c) = match d {
            Some((a, b)) => (Some(a), Some(b)),
            None => (None, None),
        };
        Ok(SmootherState {
            s_train,
            c_train,
            s_test,
            c_test,
            u_s,
            u_c,
            d_s,
            d_c,
            t,
            y,
            kind: optim.kind,
            beta1: optim.beta1,
            lambda: optim.lambda,
        })
    }
}

fn apply_rows(s: ArrayView2<'_, f64>, c: &[f64], y: &[f64]) -> Vec<f64> {
    let sy = s.dot(&ArrayView1::from(y));
    sy.iter().zip(c).map(|(a, b)| a + b).collect()
}

/// `s·y + c` for one smoother row.
pub fn apply_smoother(s: &[f64], c: f64, y: &[f64]) -> Result<f64> {
    if s.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: s.len(),
        });
    }
    Ok(s.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() + c)
}

/// `(n/|I|) Σ_j ‖s_j‖²` over the rows of `rows`.
pub fn effective_params(rows: ArrayView2<'_, f64>, n: usize) -> Result<f64> {
    if rows.nrows() == 0 {
        return Err(Error::InsufficientData(
            "effective parameters need at least one row".into(),
        ));
    }
    if rows.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rows.ncols(),
        });
    }
    let total: f64 = rows.iter().map(|v| v * v).sum();
    Ok(n as f64 / rows.nrows() as f64 * total)
}

/// Effective parameters of a subset of rows.
pub fn effective_params_subset(rows: ArrayView2<'_, f64>, subset: &[usize]) -> Result<f64> {
    let n = rows.ncols();
    let sel = rows.select(Axis(0), subset);
    effective_params(sel.view(), n)
}

#[cfg(test)]
mod tests;
