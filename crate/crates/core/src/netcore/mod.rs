//! Fully-connected network engine.
//!
//! Parameters live in a single flat [`ParamVector`]; a [`Network`] interprets
//! that vector through the layout derived from an [`ArchSpec`]. Everything is
//! `f64` and every routine is a pure function of its inputs, so identical
//! seeds give bitwise-identical parameters, predictions and gradients.
//!
//! Besides scalar `predict`/`predict_grad`, the network exposes batched
//! primitives used by the telescoping and smoother machinery:
//!
//! - [`Network::forward_batch`] caches pre-activations for a set of inputs,
//! - [`Network::jvp_batch`] evaluates `∇f(x)ᵀv` for every cached row without
//!   materialising gradients,
//! - [`Network::kernel`] evaluates tangent kernels layer by layer using the
//!   factorisation `Σ_l (δ_l δ_l'ᵀ) ∘ (a_{l-1} a_{l-1}'ᵀ + 1)`.

mod grad;
mod loss;
mod network;
mod params;

pub use grad::{batch_grad_matrix, GradMatrix};
pub use loss::{loss_and_grad, Loss};
pub(crate) use network::sigmoid;
pub use network::{ForwardCache, GradSpace, LayerFactors, Network};
pub use params::{LayerSlot, ParamLayout, ParamVector, SlotKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    /// `φ(h) = h + ε/2·h²`, used by the fixed-readout polynomial network.
    CustomQuadratic {
        eps: f64,
    },
}

impl HiddenActivation {
    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Relu => z.max(0.0),
            HiddenActivation::CustomQuadratic { eps } => z + 0.5 * eps * z * z,
        }
    }

    #[inline]
    pub(crate) fn derivative(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            HiddenActivation::CustomQuadratic { eps } => 1.0 + eps * z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `U(-1/√fan_in, 1/√fan_in)` weights, zero biases.
    KaimingUniform,
    /// `N(0, 1)` weights, zero biases.
    StandardNormal,
}

/// Architecture of a dense network with a single scalar output.
///
/// With `final_layer_trainable = false` the readout is the fixed average
/// `(1/n_h) Σ_j a_j` over the last hidden layer and carries no parameters.
/// Hidden layers of a `custom_quadratic` network have no bias, matching
/// `f(x) = (1/n_h) Σ_j φ(θ_jᵀx)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    pub final_layer_trainable: bool,
    #[serde(default = "default_init")]
    pub init: InitScheme,
}

fn default_init() -> InitScheme {
    InitScheme::KaimingUniform
}

impl ArchSpec {
    /// ReLU MLP with an identity head and Kaiming-uniform init.
    pub fn relu_mlp(input_dim: usize, hidden_dims: &[usize]) -> Self {
        ArchSpec {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim: 1,
            hidden_activation: HiddenActivation::Relu,
            output_activation: OutputActivation::Identity,
            final_layer_trainable: true,
            init: InitScheme::KaimingUniform,
        }
    }

    /// A single affine map `f(x) = wᵀx + b`, linear in its parameters.
    pub fn linear(input_dim: usize) -> Self {
        Self::relu_mlp(input_dim, &[])
    }

    /// The polynomial-grokking network: one quadratic hidden layer with a
    /// frozen averaging readout and standard-normal weights.
    pub fn quadratic(input_dim: usize, width: usize, eps: f64) -> Self {
        ArchSpec {
            input_dim,
            hidden_dims: vec![width],
            output_dim: 1,
            hidden_activation: HiddenActivation::CustomQuadratic { eps },
            output_activation: OutputActivation::Identity,
            final_layer_trainable: false,
            init: InitScheme::StandardNormal,
        }
    }

    pub fn with_output(mut self, output: OutputActivation) -> Self {
        self.output_activation = output;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArch("input_dim must be positive".into()));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&w| w == 0) {
            return Err(Error::InvalidArch(format!(
                "hidden layer {i} has zero width"
            )));
        }
        if self.output_dim != 1 {
            return Err(Error::InvalidArch(format!(
                "only scalar outputs are supported, got output_dim = {}",
                self.output_dim
            )));
        }
        if let HiddenActivation::CustomQuadratic { eps } = self.hidden_activation {
            if !eps.is_finite() {
                return Err(Error::InvalidArch("quadratic eps must be finite".into()));
            }
            if self.final_layer_trainable {
                return Err(Error::InvalidArch(
                    "custom_quadratic requires a frozen readout (final_layer_trainable = false)"
                        .into(),
                ));
            }
            if self.hidden_dims.len() != 1 {
                return Err(Error::InvalidArch(
                    "custom_quadratic networks have exactly one hidden layer".into(),
                ));
            }
        }
        if !self.final_layer_trainable && self.hidden_dims.is_empty() {
            return Err(Error::InvalidArch(
                "a frozen readout needs at least one hidden layer".into(),
            ));
        }
        Ok(())
    }

    /// Whether `∇_θ f` is independent of `θ` for this architecture.
    pub fn is_parameter_linear(&self) -> bool {
        let linear_head = self.output_activation == OutputActivation::Identity;
        if self.hidden_dims.is_empty() {
            return linear_head;
        }
        matches!(
            self.hidden_activation,
            HiddenActivation::CustomQuadratic { eps } if eps == 0.0
        ) && linear_head
            && !self.final_layer_trainable
    }

    pub fn layout(&self) -> Result<ParamLayout> {
        self.validate()?;
        Ok(ParamLayout::for_arch(self))
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.layout()?.len())
    }
}

/// Draws initial parameters for `spec` and scales every entry by `init_scale`.
pub fn build_network(spec: &ArchSpec, seed: u64, init_scale: f64) -> Result<ParamVector> {
    if !(init_scale > 0.0) || !init_scale.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "init_scale must be a positive finite number, got {init_scale}"
        )));
    }
    let layout = spec.layout()?;
    Ok(params::initialize(spec, layout, seed, init_scale))
}

/// `f_θ(x)`: post-activation output.
pub fn predict(params: &ParamVector, x: &[f64], spec: &ArchSpec) -> Result<f64> {
    let net = Network::new(spec.clone())?;
    net.predict(params, x)
}

/// `∇_θ f_θ(x)` in the requested space.
pub fn predict_grad(
    params: &ParamVector,
    x: &[f64],
    spec: &ArchSpec,
    space: GradSpace,
) -> Result<Vec<f64>> {
    let net = Network::new(spec.clone())?;
    net.predict_grad(params, x, space)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_of_two_hidden_width_200() {
        let spec = ArchSpec::relu_mlp(64, &[200, 200]);
        assert_eq!(spec.param_count().unwrap(), 53_401);
    }

    #[test]
    fn rejects_zero_width() {
        let spec = ArchSpec::relu_mlp(4, &[3, 0]);
        assert!(matches!(
            build_network(&spec, 1, 1.0),
            Err(Error::InvalidArch(_))
        ));
        let spec = ArchSpec::relu_mlp(0, &[3]);
        assert!(build_network(&spec, 1, 1.0).is_err());
    }

    #[test]
    fn quadratic_requires_frozen_readout() {
        let mut spec = ArchSpec::quadratic(5, 4, 0.2);
        assert!(spec.validate().is_ok());
        spec.final_layer_trainable = true;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn rejects_nonpositive_scale() {
        let spec = ArchSpec::relu_mlp(3, &[2]);
        assert!(build_network(&spec, 0, 0.0).is_err());
        assert!(build_network(&spec, 0, -1.0).is_err());
    }

    #[test]
    fn init_is_deterministic_and_scales() {
        let spec = ArchSpec::relu_mlp(6, &[5, 4]);
        let a = build_network(&spec, 7, 1.0).unwrap();
        let b = build_network(&spec, 7, 1.0).unwrap();
        assert_eq!(a.values(), b.values());
        let c = build_network(&spec, 7, 6.0).unwrap();
        for (x, y) in a.values().iter().zip(c.values()) {
            assert_eq!(6.0 * x, *y);
        }
        let d = build_network(&spec, 8, 1.0).unwrap();
        assert_ne!(a.values(), d.values());
    }

    #[test]
    fn zero_params_predict_zero_and_sigmoid_half() {
        let spec = ArchSpec::relu_mlp(3, &[4]);
        let layout = spec.layout().unwrap();
        let zeros = ParamVector::zeros(layout);
        assert_eq!(predict(&zeros, &[1.0, -2.0, 0.5], &spec).unwrap(), 0.0);
        let sig = spec.clone().with_output(OutputActivation::Sigmoid);
        assert_eq!(predict(&zeros, &[1.0, -2.0, 0.5], &sig).unwrap(), 0.5);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let spec = ArchSpec::relu_mlp(3, &[4]);
        let p = build_network(&spec, 1, 1.0).unwrap();
        assert!(matches!(
            predict(&p, &[1.0, 2.0], &spec),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 2
            })
        ));
        assert!(predict_grad(&p, &[1.0], &spec, GradSpace::Output).is_err());
    }

    #[test]
    fn linear_gradient_is_the_input() {
        let spec = ArchSpec::linear(3);
        let p = build_network(&spec, 3, 1.0).unwrap();
        let g = predict_grad(&p, &[2.0, -1.0, 0.5], &spec, GradSpace::Output).unwrap();
        assert_eq!(g, vec![2.0, -1.0, 0.5, 1.0]);
    }

    #[test]
    fn parameter_linear_detection() {
        assert!(ArchSpec::linear(3).is_parameter_linear());
        assert!(ArchSpec::quadratic(3, 4, 0.0).is_parameter_linear());
        assert!(!ArchSpec::quadratic(3, 4, 0.2).is_parameter_linear());
        assert!(!ArchSpec::relu_mlp(3, &[4]).is_parameter_linear());
    }
}
