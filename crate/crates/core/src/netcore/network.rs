use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::params::{LayerSlot, ParamLayout, ParamVector, SlotKind};
use super::{ArchSpec, HiddenActivation, OutputActivation};
use crate::error::{Error, Result};

/// Which scalar the gradient is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradSpace {
    /// The network output `f = σ(g)` (or `g` for an identity head).
    Output,
    /// The pre-activation head `g`.
    PreActivation,
}

#[derive(Debug, Clone)]
struct Dense {
    out_dim: usize,
    weight: LayerSlot,
    bias: Option<LayerSlot>,
}

/// Evaluator binding an [`ArchSpec`] to its parameter layout.
#[derive(Debug, Clone)]
pub struct Network {
    spec: ArchSpec,
    layout: ParamLayout,
    hidden: Vec<Dense>,
    readout: Option<Dense>,
}

/// Pre- and post-activations of a batch of inputs at one parameter value.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
    head: Vec<f64>,
    sigmoid: bool,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    /// Pre-activation head values `g(x)`.
    pub fn pre_activation(&self) -> &[f64] {
        &self.head
    }

    /// Values in the requested space.
    pub fn outputs(&self, space: GradSpace) -> Vec<f64> {
        match (space, self.sigmoid) {
            (GradSpace::Output, true) => self.head.iter().map(|&g| sigmoid(g)).collect(),
            _ => self.head.clone(),
        }
    }

    fn head_slope(&self, space: GradSpace) -> Vec<f64> {
        match (space, self.sigmoid) {
            (GradSpace::Output, true) => self
                .head
                .iter()
                .map(|&g| {
                    let s = sigmoid(g);
                    s * (1.0 - s)
                })
                .collect(),
            _ => vec![1.0; self.head.len()],
        }
    }

    fn layer_input(&self, l: usize) -> ArrayView2<'_, f64> {
        if l == 0 {
            self.inputs.view()
        } else {
            self.post[l - 1].view()
        }
    }
}

/// Per-layer backprop factors of a batch: the gradient of row `i` with respect
/// to the weights of `layer` is `delta[i] ⊗ input[i]`, and `delta[i]` for the bias.
#[derive(Debug, Clone)]
pub struct LayerFactors {
    pub layer: usize,
    pub delta: Array2<f64>,
    pub input: Array2<f64>,
    pub has_bias: bool,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Network {
    pub fn new(spec: ArchSpec) -> Result<Self> {
        let layout = spec.layout()?;
        let mut dims = vec![spec.input_dim];
        dims.extend(&spec.hidden_dims);
        let hidden = (0..spec.hidden_dims.len())
            .map(|l| Dense {
                out_dim: dims[l + 1],
                weight: *layout.slot(l, SlotKind::Weight).expect("weight slot"),
                bias: layout.slot(l, SlotKind::Bias).copied(),
            })
            .collect();
        let readout = if spec.final_layer_trainable {
            let l = spec.hidden_dims.len();
            Some(Dense {
                out_dim: 1,
                weight: *layout.slot(l, SlotKind::Weight).expect("readout weight"),
                bias: layout.slot(l, SlotKind::Bias).copied(),
            })
        } else {
            None
        };
        Ok(Network {
            spec,
            layout,
            hidden,
            readout,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.layout() != &self.layout {
            return Err(Error::LayoutMismatch);
        }
        Ok(())
    }

    fn activation(&self) -> HiddenActivation {
        self.spec.hidden_activation
    }

    /// Forward pass over the rows of `inputs`.
    pub fn forward_batch(
        &self,
        params: &ParamVector,
        inputs: ArrayView2<'_, f64>,
    ) -> Result<ForwardCache> {
        self.check_params(params)?;
        if inputs.ncols() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                got: inputs.ncols(),
            });
        }
        let act = self.activation();
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let a = post.last().map(|p| p.view()).unwrap_or(inputs);
            let w = params.slot_view(&layer.weight);
            let mut z = a.dot(&w.t());
            if let Some(b) = &layer.bias {
                z += &params.bias_view(b);
            }
            post.push(z.mapv(|v| act.apply(v)));
            pre.push(z);
        }
        let last = post.last().map(|p| p.view()).unwrap_or(inputs);
        let head: Vec<f64> = match &self.readout {
            Some(r) => {
                let w = params.slot_view(&r.weight);
                let b = r.bias.map(|b| params.values()[b.offset]).unwrap_or(0.0);
                last.dot(&w.row(0)).iter().map(|v| v + b).collect()
            }
            None => last
                .mean_axis(Axis(1))
                .expect("nonempty hidden layer")
                .to_vec(),
        };
        Ok(ForwardCache {
            inputs: inputs.to_owned(),
            pre,
            post,
            head,
            sigmoid: self.spec.output_activation == OutputActivation::Sigmoid,
        })
    }

    pub fn forward_rows(&self, params: &ParamVector, rows: &[&[f64]]) -> Result<ForwardCache> {
        let d = self.spec.input_dim;
        let mut x = Array2::zeros((rows.len(), d));
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            x.row_mut(i).assign(&ndarray::ArrayView1::from(*r));
        }
        self.forward_batch(params, x.view())
    }

    pub fn predict(&self, params: &ParamVector, x: &[f64]) -> Result<f64> {
        Ok(self.forward_rows(params, &[x])?.outputs(GradSpace::Output)[0])
    }

    pub fn predict_pre_activation(&self, params: &ParamVector, x: &[f64]) -> Result<f64> {
        Ok(self.forward_rows(params, &[x])?.pre_activation()[0])
    }

    pub fn predict_grad(
        &self,
        params: &ParamVector,
        x: &[f64],
        space: GradSpace,
    ) -> Result<Vec<f64>> {
        let cache = self.forward_rows(params, &[x])?;
        let g = self.grad_rows(params, &cache, space)?;
        Ok(g.row(0).to_vec())
    }

    /// Backprop factors for every trainable layer, output layer first.
    pub fn factors(
        &self,
        params: &ParamVector,
        cache: &ForwardCache,
        space: GradSpace,
    ) -> Result<Vec<LayerFactors>> {
        self.check_params(params)?;
        let n = cache.len();
        let slope = Array1::from(cache.head_slope(space));
        let act = self.activation();
        let mut out = Vec::with_capacity(self.hidden.len() + 1);

        // Gradient with respect to the last hidden activations (or the inputs).
        let mut d_act: Array2<f64> = match &self.readout {
            Some(r) => {
                let l = self.hidden.len();
                let delta = slope.clone().into_shape_with_order((n, 1)).expect("column");
                let w = params.slot_view(&r.weight);
                let d_prev = delta.dot(&w);
                out.push(LayerFactors {
                    layer: l,
                    delta,
                    input: cache.layer_input(l).to_owned(),
                    has_bias: r.bias.is_some(),
                });
                d_prev
            }
            None => {
                let width = self.hidden.last().expect("hidden layer").out_dim as f64;
                let mut d = Array2::zeros((n, self.hidden.last().unwrap().out_dim));
                for (mut row, s) in d.rows_mut().into_iter().zip(slope.iter()) {
                    row.fill(s / width);
                }
                d
            }
        };
        for (l, layer) in self.hidden.iter().enumerate().rev() {
            let mut dz = d_act;
            dz.zip_mut_with(&cache.pre[l], |d, &z| *d *= act.derivative(z));
            let w = params.slot_view(&layer.weight);
            d_act = if l > 0 {
                dz.dot(&w)
            } else {
                Array2::zeros((0, 0))
            };
            out.push(LayerFactors {
                layer: l,
                delta: dz,
                input: cache.layer_input(l).to_owned(),
                has_bias: layer.bias.is_some(),
            });
        }
        Ok(out)
    }

    /// Materialised per-row gradients, shape `(rows, p)`.
    pub fn grad_rows(
        &self,
        params: &ParamVector,
        cache: &ForwardCache,
        space: GradSpace,
    ) -> Result<Array2<f64>> {
        let factors = self.factors(params, cache, space)?;
        Ok(self.grad_rows_from_factors(&factors))
    }

    /// Per-row gradients assembled from backprop factors.
    pub fn grad_rows_from_factors(&self, factors: &[LayerFactors]) -> Array2<f64> {
        let rows = factors.first().map(|f| f.delta.nrows()).unwrap_or(0);
        let mut g = Array2::zeros((rows, self.param_count()));
        for f in factors {
            let w = self.layout.slot(f.layer, SlotKind::Weight).unwrap();
            let b = self.layout.slot(f.layer, SlotKind::Bias);
            let (out_dim, in_dim) = w.shape;
            for i in 0..rows {
                let mut row = g.row_mut(i);
                let dst = row.as_slice_mut().expect("contiguous row");
                let delta = f.delta.row(i);
                let input = f.input.row(i);
                for o in 0..out_dim {
                    let base = w.offset + o * in_dim;
                    let d = delta[o];
                    for (k, a) in input.iter().enumerate() {
                        dst[base + k] = d * a;
                    }
                }
                if let Some(b) = b {
                    for (k, d) in delta.iter().enumerate() {
                        dst[b.offset + k] = *d;
                    }
                }
            }
        }
        g
    }

    /// `Σ_i w_i ∇f(x_i)` without materialising per-row gradients.
    pub fn weighted_grad_sum(
        &self,
        params: &ParamVector,
        cache: &ForwardCache,
        weights: &[f64],
        space: GradSpace,
    ) -> Result<Vec<f64>> {
        if weights.len() != cache.len() {
            return Err(Error::DimensionMismatch {
                expected: cache.len(),
                got: weights.len(),
            });
        }
        let factors = self.factors(params, cache, space)?;
        let w = ndarray::ArrayView1::from(weights);
        let mut out = vec![0.0; self.param_count()];
        for f in &factors {
            let mut scaled = f.delta.clone();
            for (mut row, wi) in scaled.rows_mut().into_iter().zip(w.iter()) {
                row *= *wi;
            }
            let gw = scaled.t().dot(&f.input);
            let slot = self.layout.slot(f.layer, SlotKind::Weight).unwrap();
            out[slot.range()].copy_from_slice(gw.as_slice().expect("standard layout"));
            if let Some(b) = self.layout.slot(f.layer, SlotKind::Bias) {
                let gb = scaled.sum_axis(Axis(0));
                out[b.range()].copy_from_slice(gb.as_slice().unwrap());
            }
        }
        Ok(out)
    }

    /// Directional derivatives `∇f(x_i)ᵀ v` for every cached row.
    pub fn jvp_batch(
        &self,
        params: &ParamVector,
        cache: &ForwardCache,
        direction: &[f64],
        space: GradSpace,
    ) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if direction.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: direction.len(),
            });
        }
        let dir = ParamVector::new(direction.to_vec(), self.layout.clone())?;
        let act = self.activation();
        let mut tangent: Option<Array2<f64>> = None;
        for (l, layer) in self.hidden.iter().enumerate() {
            let v = dir.slot_view(&layer.weight);
            let mut dz = cache.layer_input(l).dot(&v.t());
            if let Some(t) = &tangent {
                dz += &t.dot(&params.slot_view(&layer.weight).t());
            }
            if let Some(b) = &layer.bias {
                dz += &dir.bias_view(b);
            }
            dz.zip_mut_with(&cache.pre[l], |d, &z| *d *= act.derivative(z));
            tangent = Some(dz);
        }
        let l = self.hidden.len();
        let dg: Vec<f64> = match &self.readout {
            Some(r) => {
                let v = dir.slot_view(&r.weight);
                let mut dg = cache.layer_input(l).dot(&v.row(0));
                if let Some(t) = &tangent {
                    dg += &t.dot(&params.slot_view(&r.weight).row(0));
                }
                if let Some(b) = r.bias {
                    dg += direction[b.offset];
                }
                dg.to_vec()
            }
            None => tangent
                .expect("hidden layer")
                .mean_axis(Axis(1))
                .expect("nonempty")
                .to_vec(),
        };
        let slope = cache.head_slope(space);
        Ok(dg.iter().zip(slope).map(|(d, s)| d * s).collect())
    }

    /// Tangent kernel matrix `[∇f_a(x_i)ᵀ∇f_b(x'_j)]` between two factorised batches.
    /// The two sides may come from different parameter values.
    pub fn kernel(a: &[LayerFactors], b: &[LayerFactors]) -> Array2<f64> {
        let na = a.first().map(|f| f.delta.nrows()).unwrap_or(0);
        let nb = b.first().map(|f| f.delta.nrows()).unwrap_or(0);
        let mut k = Array2::zeros((na, nb));
        for (fa, fb) in a.iter().zip(b) {
            debug_assert_eq!(fa.layer, fb.layer);
            let dd = fa.delta.dot(&fb.delta.t());
            let mut aa = fa.input.dot(&fb.input.t());
            if fa.has_bias {
                aa += 1.0;
            }
            k += &(dd * aa);
        }
        k
    }

    /// Layer index of every parameter.
    pub fn param_layers(&self) -> Vec<usize> {
        let mut out = vec![0; self.param_count()];
        for s in self.layout.slots() {
            out[s.range()].fill(s.layer);
        }
        out
    }

    pub fn num_layers(&self) -> usize {
        self.layout.num_layers()
    }

    /// Restrict a factor list to a subset of rows.
    pub fn select_rows(factors: &[LayerFactors], rows: &[usize]) -> Vec<LayerFactors> {
        factors
            .iter()
            .map(|f| LayerFactors {
                layer: f.layer,
                delta: f.delta.select(Axis(0), rows),
                input: f.input.select(Axis(0), rows),
                has_bias: f.has_bias,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{build_network, ArchSpec, InitScheme};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    /// Straight-line scalar evaluator, written against the unflattened layers.
    fn reference_forward(spec: &ArchSpec, p: &ParamVector, x: &[f64]) -> f64 {
        let layers = p.unflatten();
        let mut a = x.to_vec();
        for lp in layers.iter().take(spec.hidden_dims.len()) {
            let mut next = Vec::new();
            for o in 0..lp.weight.nrows() {
                let mut z = lp.bias.as_ref().map(|b| b[o]).unwrap_or(0.0);
                for k in 0..a.len() {
                    z += lp.weight[[o, k]] * a[k];
                }
                next.push(spec.hidden_activation.apply(z));
            }
            a = next;
        }
        let g = if spec.final_layer_trainable {
            let lp = layers.last().unwrap();
            let mut z = lp.bias.as_ref().unwrap()[0];
            for k in 0..a.len() {
                z += lp.weight[[0, k]] * a[k];
            }
            z
        } else {
            a.iter().sum::<f64>() / a.len() as f64
        };
        match spec.output_activation {
            OutputActivation::Identity => g,
            OutputActivation::Sigmoid => 1.0 / (1.0 + (-g).exp()),
        }
    }

    fn variants() -> Vec<ArchSpec> {
        let mut quad = ArchSpec::quadratic(5, 7, 0.3);
        quad.init = InitScheme::KaimingUniform;
        vec![
            ArchSpec::linear(5),
            ArchSpec::relu_mlp(5, &[6]),
            ArchSpec::relu_mlp(5, &[6, 4]),
            ArchSpec::relu_mlp(5, &[6, 4]).with_output(OutputActivation::Sigmoid),
            quad,
            ArchSpec::quadratic(5, 7, 0.2).with_output(OutputActivation::Sigmoid),
        ]
    }

    #[test]
    fn batched_forward_matches_scalar_reference() {
        for (k, spec) in variants().into_iter().enumerate() {
            let net = Network::new(spec.clone()).unwrap();
            let p = build_network(&spec, 11 + k as u64, 1.0).unwrap();
            let x = random_inputs(9, 5, k as u64);
            let cache = net.forward_batch(&p, x.view()).unwrap();
            let out = cache.outputs(GradSpace::Output);
            for i in 0..9 {
                let r = reference_forward(&spec, &p, x.row(i).as_slice().unwrap());
                assert!(
                    (out[i] - r).abs() <= 1e-12 * (1.0 + r.abs()),
                    "{spec:?} row {i}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-5;
        for (k, spec) in variants().into_iter().enumerate() {
            let net = Network::new(spec.clone()).unwrap();
            let p = build_network(&spec, 100 + k as u64, 1.0).unwrap();
            let x = random_inputs(3, 5, 50 + k as u64);
            for space in [GradSpace::Output, GradSpace::PreActivation] {
                for i in 0..3 {
                    let xi = x.row(i).to_vec();
                    let g = net.predict_grad(&p, &xi, space).unwrap();
                    let eval = |q: &ParamVector| match space {
                        GradSpace::Output => net.predict(q, &xi).unwrap(),
                        GradSpace::PreActivation => net.predict_pre_activation(q, &xi).unwrap(),
                    };
                    let mut num = vec![0.0; p.len()];
                    for j in 0..p.len() {
                        let mut plus = p.clone();
                        plus.values_mut()[j] += h;
                        let mut minus = p.clone();
                        minus.values_mut()[j] -= h;
                        num[j] = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    }
                    let diff: f64 = g
                        .iter()
                        .zip(&num)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let scale: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    assert!(
                        diff / scale <= 1e-6,
                        "{spec:?} {space:?}: rel err {}",
                        diff / scale
                    );
                }
            }
        }
    }

    #[test]
    fn sigmoid_head_slope_at_zero_is_a_quarter() {
        let spec = ArchSpec::relu_mlp(3, &[4]).with_output(OutputActivation::Sigmoid);
        let net = Network::new(spec.clone()).unwrap();
        let mut p = build_network(&spec, 2, 1.0).unwrap();
        // Zero readout weights and bias put g(x) = 0 exactly.
        let l = net.layout().num_layers() - 1;
        for s in net.layout().layer_ranges(l) {
            p.values_mut()[s].fill(0.0);
        }
        let x = [0.3, -0.2, 0.9];
        assert_eq!(net.predict_pre_activation(&p, &x).unwrap(), 0.0);
        let post = net.predict_grad(&p, &x, GradSpace::Output).unwrap();
        let pre = net.predict_grad(&p, &x, GradSpace::PreActivation).unwrap();
        for (a, b) in post.iter().zip(&pre) {
            assert_eq!(*a, 0.25 * b);
        }
    }

    #[test]
    fn jvp_and_weighted_sum_agree_with_materialised_rows() {
        for (k, spec) in variants().into_iter().enumerate() {
            let net = Network::new(spec.clone()).unwrap();
            let p = build_network(&spec, 7 + k as u64, 1.0).unwrap();
            let x = random_inputs(6, 5, k as u64 + 20);
            let cache = net.forward_batch(&p, x.view()).unwrap();
            let g = net.grad_rows(&p, &cache, GradSpace::Output).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            let v: Vec<f64> = (0..p.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let jvp = net.jvp_batch(&p, &cache, &v, GradSpace::Output).unwrap();
            for i in 0..6 {
                let direct: f64 = g.row(i).iter().zip(&v).map(|(a, b)| a * b).sum();
                assert!((direct - jvp[i]).abs() <= 1e-12 * (1.0 + direct.abs()));
            }
            let w: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
            let summed = net
                .weighted_grad_sum(&p, &cache, &w, GradSpace::Output)
                .unwrap();
            for j in 0..p.len() {
                let direct: f64 = (0..6).map(|i| w[i] * g[[i, j]]).sum();
                assert!((direct - summed[j]).abs() <= 1e-12 * (1.0 + direct.abs()));
            }
            let f = net.factors(&p, &cache, GradSpace::Output).unwrap();
            let kmat = Network::kernel(&f, &f);
            let direct = g.dot(&g.t());
            for (a, b) in kmat.iter().zip(direct.iter()) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn parameter_linear_gradients_do_not_depend_on_theta() {
        let spec = ArchSpec::quadratic(4, 3, 0.0);
        let net = Network::new(spec.clone()).unwrap();
        let x = [0.5, -1.0, 2.0, 0.1];
        let a = net
            .predict_grad(
                &build_network(&spec, 1, 1.0).unwrap(),
                &x,
                GradSpace::Output,
            )
            .unwrap();
        let b = net
            .predict_grad(
                &build_network(&spec, 2, 3.0).unwrap(),
                &x,
                GradSpace::Output,
            )
            .unwrap();
        assert_eq!(a, b);
    }
}
