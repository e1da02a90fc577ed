//! Telescoping first-order model of a training run.
//!
//! For every tracked input the [`Telescope`] maintains three numbers:
//! the true prediction `f_{θ_t}(x)`, the telescoped prediction
//! `f̃_t(x) = f_{θ_0}(x) + Σ_k ∇f_{θ_{k-1}}(x)ᵀΔθ_k`, and the model linearised
//! once at initialisation `f_lin_t(x) = f_{θ_0}(x) + ∇f_{θ_0}(x)ᵀ(θ_t - θ_0)`.
//!
//! The inner products are evaluated as Jacobian-vector products from cached
//! pre-activations, so no per-input gradient vector is ever stored.

mod kernel;

pub use kernel::{
    cross_temporal_kernel, kernel_row_norm, raw_kernel, tangent_kernel, KernelSnapshot,
};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::netcore::{sigmoid, ForwardCache, GradSpace, Network, OutputActivation, ParamVector};

#[derive(Debug, Clone)]
pub struct Telescope {
    net: Network,
    space: GradSpace,
    params0: ParamVector,
    cache0: ForwardCache,
    params: ParamVector,
    cache: ForwardCache,
    f_true: Vec<f64>,
    f_tilde: Vec<f64>,
    f_lin: Vec<f64>,
    true_increments: Vec<f64>,
    step: usize,
}

/// Read-only view of the three accumulators, in output space.
#[derive(Debug, Clone, PartialEq)]
pub struct TelescopeTrace {
    pub f_true: Vec<f64>,
    pub f_tilde: Vec<f64>,
    pub f_lin: Vec<f64>,
}

/// Serializable accumulator state, enough to rebuild a [`Telescope`].
#[derive(Debug, Clone, PartialEq)]
pub struct TelescopeState {
    pub step: usize,
    pub f_tilde: Vec<f64>,
    pub f_lin: Vec<f64>,
    pub true_increments: Vec<f64>,
}

impl Telescope {
    /// Starts tracking `inputs` at `params0`. `space` selects whether the
    /// pre-activation head or the network output is telescoped.
    pub fn new(
        net: &Network,
        params0: &ParamVector,
        inputs: ArrayView2<'_, f64>,
        space: GradSpace,
    ) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::InsufficientData(
                "telescope needs at least one tracked input".into(),
            ));
        }
        let cache0 = net.forward_batch(params0, inputs)?;
        let f0 = cache0.outputs(space);
        Ok(Telescope {
            net: net.clone(),
            space,
            params0: params0.clone(),
            cache: cache0.clone(),
            cache0,
            params: params0.clone(),
            f_true: f0.clone(),
            f_tilde: f0.clone(),
            f_lin: f0,
            true_increments: vec![0.0; inputs.nrows()],
            step: 0,
        })
    }

    /// Rebuilds a tracker at `params` from saved accumulators.
    pub fn restore(
        net: &Network,
        params0: &ParamVector,
        params: &ParamVector,
        inputs: ArrayView2<'_, f64>,
        space: GradSpace,
        state: TelescopeState,
    ) -> Result<Self> {
        let mut tel = Telescope::new(net, params0, inputs, space)?;
        let n = inputs.nrows();
        for v in [&state.f_tilde, &state.f_lin, &state.true_increments] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
        }
        tel.cache = net.forward_batch(params, inputs)?;
        tel.params = params.clone();
        tel.f_true = tel.cache.outputs(space);
        tel.f_tilde = state.f_tilde;
        tel.f_lin = state.f_lin;
        tel.true_increments = state.true_increments;
        tel.step = state.step;
        Ok(tel)
    }

    pub fn state(&self) -> TelescopeState {
        TelescopeState {
            step: self.step,
            f_tilde: self.f_tilde.clone(),
            f_lin: self.f_lin.clone(),
            true_increments: self.true_increments.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.f_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_true.is_empty()
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn space(&self) -> GradSpace {
        self.space
    }

    /// Parameters the tracker currently sits at, `θ_t`.
    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Forward cache of the tracked inputs at `θ_t`.
    pub fn cache(&self) -> &ForwardCache {
        &self.cache
    }

    pub fn inputs(&self) -> &Array2<f64> {
        self.cache.inputs()
    }

    /// Advances by `Δθ_t`, moving from `θ_{t-1}` to `θ_t = θ_{t-1} + Δθ_t`.
    pub fn step(&mut self, delta: &[f64]) -> Result<()> {
        let p = self.params.len();
        if delta.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: delta.len(),
            });
        }
        let d_tilde = self
            .net
            .jvp_batch(&self.params, &self.cache, delta, self.space)?;
        let d_lin = self
            .net
            .jvp_batch(&self.params0, &self.cache0, delta, self.space)?;
        self.params.add_assign(delta)?;
        self.cache = self
            .net
            .forward_batch(&self.params, self.cache.inputs().view())?;
        let f_new = self.cache.outputs(self.space);
        for i in 0..f_new.len() {
            self.f_tilde[i] += d_tilde[i];
            self.f_lin[i] += d_lin[i];
            self.true_increments[i] += f_new[i] - self.f_true[i];
        }
        self.f_true = f_new;
        self.step += 1;
        Ok(())
    }

    fn read(&self, v: &[f64]) -> Vec<f64> {
        let squash = self.space == GradSpace::PreActivation
            && self.net.spec().output_activation == OutputActivation::Sigmoid;
        if squash {
            v.iter().map(|&g| sigmoid(g)).collect()
        } else {
            v.to_vec()
        }
    }

    /// Accumulators in output space.
    pub fn trace(&self) -> TelescopeTrace {
        TelescopeTrace {
            f_true: self.read(&self.f_true),
            f_tilde: self.read(&self.f_tilde),
            f_lin: self.read(&self.f_lin),
        }
    }

    /// Accumulators in the tracking space (pre-activation when tracking `g`).
    pub fn raw_trace(&self) -> TelescopeTrace {
        TelescopeTrace {
            f_true: self.f_true.clone(),
            f_tilde: self.f_tilde.clone(),
            f_lin: self.f_lin.clone(),
        }
    }

    /// `f_true(θ_0) + Σ_k (f_true(θ_k) − f_true(θ_{k-1}))` in tracking space.
    pub fn summed_true_increments(&self) -> Vec<f64> {
        self.cache0
            .outputs(self.space)
            .iter()
            .zip(&self.true_increments)
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn approx_error(&self) -> Result<(f64, f64)> {
        approx_error(&self.trace())
    }
}

/// Mean absolute deviation of `f̃` and `f_lin` from the true predictions.
pub fn approx_error(trace: &TelescopeTrace) -> Result<(f64, f64)> {
    let n = trace.f_true.len();
    if n == 0 {
        return Err(Error::InsufficientData("no tracked inputs".into()));
    }
    let mut tilde = 0.0;
    let mut lin = 0.0;
    for i in 0..n {
        tilde += (trace.f_true[i] - trace.f_tilde[i]).abs();
        lin += (trace.f_true[i] - trace.f_lin[i]).abs();
    }
    Ok((tilde / n as f64, lin / n as f64))
}
