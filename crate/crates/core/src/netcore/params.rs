use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{ArchSpec, HiddenActivation, InitScheme};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Weight,
    Bias,
}

/// One contiguous block of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub layer: usize,
    pub kind: SlotKind,
    /// `(rows, cols)`; biases are `(out, 1)`.
    pub shape: (usize, usize),
    pub offset: usize,
}

impl LayerSlot {
    pub fn len(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    slots: Vec<LayerSlot>,
    len: usize,
}

impl ParamLayout {
    pub(crate) fn for_arch(spec: &ArchSpec) -> Self {
        let quadratic = matches!(
            spec.hidden_activation,
            HiddenActivation::CustomQuadratic { .. }
        );
        let mut dims = vec![spec.input_dim];
        dims.extend(&spec.hidden_dims);
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |layer, kind, shape: (usize, usize)| {
            slots.push(LayerSlot {
                layer,
                kind,
                shape,
                offset,
            });
            offset += shape.0 * shape.1;
        };
        for (l, win) in dims.windows(2).enumerate() {
            push(l, SlotKind::Weight, (win[1], win[0]));
            if !quadratic {
                push(l, SlotKind::Bias, (win[1], 1));
            }
        }
        if spec.final_layer_trainable {
            let l = dims.len() - 1;
            let fan_in = *dims.last().unwrap();
            push(l, SlotKind::Weight, (spec.output_dim, fan_in));
            push(l, SlotKind::Bias, (spec.output_dim, 1));
        }
        ParamLayout { slots, len: offset }
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of distinct trainable layers.
    pub fn num_layers(&self) -> usize {
        self.slots.iter().map(|s| s.layer + 1).max().unwrap_or(0)
    }

    pub fn slot(&self, layer: usize, kind: SlotKind) -> Option<&LayerSlot> {
        self.slots
            .iter()
            .find(|s| s.layer == layer && s.kind == kind)
    }

    /// Parameter indices belonging to `layer` (weights and bias).
    pub fn layer_ranges(&self, layer: usize) -> Vec<std::ops::Range<usize>> {
        self.slots
            .iter()
            .filter(|s| s.layer == layer)
            .map(|s| s.range())
            .collect()
    }
}

/// Weights and bias of one layer, unflattened.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

/// Flat `f64` parameter vector with its layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: ParamLayout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: ParamLayout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: ParamLayout) -> Self {
        ParamVector {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn slot_view(&self, slot: &LayerSlot) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(slot.shape, &self.values[slot.range()]).expect("slot shape")
    }

    pub(crate) fn bias_view(&self, slot: &LayerSlot) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[slot.range()])
    }

    /// `self += delta`.
    pub fn add_assign(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                got: delta.len(),
            });
        }
        for (v, d) in self.values.iter_mut().zip(delta) {
            *v += d;
        }
        Ok(())
    }

    /// `α·a + (1-α)·b`, elementwise.
    pub fn interpolate(a: &ParamVector, b: &ParamVector, alpha: f64) -> Result<ParamVector> {
        if a.layout != b.layout {
            return Err(Error::LayoutMismatch);
        }
        let values = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
            .collect();
        Ok(ParamVector {
            values,
            layout: a.layout.clone(),
        })
    }

    pub fn unflatten(&self) -> Vec<LayerParams> {
        let mut out: Vec<LayerParams> = Vec::new();
        for slot in self.layout.slots() {
            match slot.kind {
                SlotKind::Weight => out.push(LayerParams {
                    weight: self.slot_view(slot).to_owned(),
                    bias: None,
                }),
                SlotKind::Bias => {
                    out[slot.layer].bias = Some(self.bias_view(slot).to_owned());
                }
            }
        }
        out
    }

    pub fn flatten(layers: &[LayerParams], layout: ParamLayout) -> Result<ParamVector> {
        let mut values = vec![0.0; layout.len()];
        for slot in layout.slots() {
            let lp = layers.get(slot.layer).ok_or(Error::LayoutMismatch)?;
            let src: Vec<f64> = match slot.kind {
                SlotKind::Weight => {
                    if lp.weight.dim() != slot.shape {
                        return Err(Error::LayoutMismatch);
                    }
                    lp.weight.iter().copied().collect()
                }
                SlotKind::Bias => {
                    let b = lp.bias.as_ref().ok_or(Error::LayoutMismatch)?;
                    if b.len() != slot.shape.0 {
                        return Err(Error::LayoutMismatch);
                    }
                    b.to_vec()
                }
            };
            values[slot.range()].copy_from_slice(&src);
        }
        Ok(ParamVector { values, layout })
    }
}

pub(crate) fn initialize(
    spec: &ArchSpec,
    layout: ParamLayout,
    seed: u64,
    scale: f64,
) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; layout.len()];
    for slot in layout.slots() {
        if slot.kind == SlotKind::Bias {
            continue;
        }
        let fan_in = slot.shape.1 as f64;
        let dst = &mut values[slot.range()];
        match spec.init {
            InitScheme::KaimingUniform => {
                let bound = 1.0 / fan_in.sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                for v in dst.iter_mut() {
                    *v = scale * dist.sample(&mut rng);
                }
            }
            InitScheme::StandardNormal => {
                for v in dst.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = scale * z;
                }
            }
        }
    }
    ParamVector { values, layout }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::build_network;
    use proptest::prelude::*;

    #[test]
    fn offsets_partition_the_vector() {
        let spec = ArchSpec::relu_mlp(7, &[5, 3]);
        let layout = spec.layout().unwrap();
        let mut next = 0;
        for s in layout.slots() {
            assert_eq!(s.offset, next);
            next += s.len();
        }
        assert_eq!(next, layout.len());
        assert_eq!(layout.num_layers(), 3);
    }

    #[test]
    fn quadratic_layout_has_only_hidden_weights() {
        let spec = ArchSpec::quadratic(100, 500, 0.2);
        let layout = spec.layout().unwrap();
        assert_eq!(layout.slots().len(), 1);
        assert_eq!(layout.len(), 50_000);
    }

    #[test]
    fn interpolate_rejects_layout_mismatch() {
        let a = build_network(&ArchSpec::relu_mlp(3, &[2]), 0, 1.0).unwrap();
        let b = build_network(&ArchSpec::relu_mlp(3, &[4]), 0, 1.0).unwrap();
        assert!(matches!(
            ParamVector::interpolate(&a, &b, 0.5),
            Err(Error::LayoutMismatch)
        ));
    }

    proptest! {
        #[test]
        fn unflatten_flatten_roundtrip(
            input in 1usize..6,
            hidden in proptest::collection::vec(1usize..6, 0..3),
            seed in any::<u64>(),
        ) {
            let spec = ArchSpec::relu_mlp(input, &hidden);
            let p = build_network(&spec, seed, 1.0).unwrap();
            let back = ParamVector::flatten(&p.unflatten(), p.layout().clone()).unwrap();
            prop_assert_eq!(back.values(), p.values());
        }
    }
}
