use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use super::{ArchSpec, GradSpace, Network, ParamVector};
use crate::error::{Error, Result};

/// Batch gradient matrix: column `j` is `(1/|B|)·∇f(x_{indices[j]})`.
///
/// Stored row-major as `b × p` so each column is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMatrix {
    cols: Array2<f64>,
    indices: Vec<usize>,
    batch_scale: f64,
}

impl GradMatrix {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn batch_scale(&self) -> f64 {
        self.batch_scale
    }

    pub fn batch_size(&self) -> usize {
        self.indices.len()
    }

    pub fn param_count(&self) -> usize {
        self.cols.ncols()
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.cols.row(j)
    }

    /// All columns as a `b × p` view.
    pub fn columns_t(&self) -> ArrayView2<'_, f64> {
        self.cols.view()
    }

    /// `T g` for a per-batch-example vector `g`.
    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.indices.len() {
            return Err(Error::DimensionMismatch {
                expected: self.indices.len(),
                got: g.len(),
            });
        }
        Ok(self.cols.t().dot(&ArrayView1::from(g)).to_vec())
    }

    /// Sum of the columns.
    pub fn column_sum(&self) -> Vec<f64> {
        self.cols.sum_axis(Axis(0)).to_vec()
    }
}

/// Builds `T_t` for `batch` rows of `inputs` at `params`.
pub fn batch_grad_matrix(
    params: &ParamVector,
    batch: &[usize],
    inputs: ArrayView2<'_, f64>,
    spec: &ArchSpec,
    space: GradSpace,
) -> Result<GradMatrix> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = inputs.nrows();
    let mut seen = std::collections::HashSet::with_capacity(batch.len());
    for &i in batch {
        if i >= n {
            return Err(Error::IndexOutOfBounds { index: i, len: n });
        }
        if !seen.insert(i) {
            return Err(Error::InvalidConfig(format!("batch index {i} repeated")));
        }
    }
    let net = Network::new(spec.clone())?;
    let x = inputs.select(Axis(0), batch);
    let cache = net.forward_batch(params, x.view())?;
    let scale = 1.0 / batch.len() as f64;
    let mut cols = net.grad_rows(params, &cache, space)?;
    cols *= scale;
    Ok(GradMatrix {
        cols,
        indices: batch.to_vec(),
        batch_scale: scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::build_network;

    fn setup() -> (ArchSpec, ParamVector, Array2<f64>) {
        let spec = ArchSpec::relu_mlp(3, &[5]);
        let p = build_network(&spec, 4, 1.0).unwrap();
        let x = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        (spec, p, x)
    }

    #[test]
    fn single_example_column_is_full_gradient() {
        let (spec, p, x) = setup();
        let t = batch_grad_matrix(&p, &[2], x.view(), &spec, GradSpace::Output).unwrap();
        let g = crate::netcore::predict_grad(
            &p,
            x.row(2).as_slice().unwrap(),
            &spec,
            GradSpace::Output,
        )
        .unwrap();
        assert_eq!(t.batch_scale(), 1.0);
        assert_eq!(t.column(0).to_vec(), g);
    }

    #[test]
    fn full_batch_columns_sum_to_mean_gradient() {
        let (spec, p, x) = setup();
        let all: Vec<usize> = (0..6).collect();
        let t = batch_grad_matrix(&p, &all, x.view(), &spec, GradSpace::Output).unwrap();
        let mut mean = vec![0.0; p.len()];
        for i in 0..6 {
            let g = crate::netcore::predict_grad(
                &p,
                x.row(i).as_slice().unwrap(),
                &spec,
                GradSpace::Output,
            )
            .unwrap();
            for (m, v) in mean.iter_mut().zip(g) {
                *m += v / 6.0;
            }
        }
        for (a, b) in t.column_sum().iter().zip(&mean) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn apply_on_one_example_scales_its_gradient() {
        let (spec, p, x) = setup();
        let t = batch_grad_matrix(&p, &[1, 4], x.view(), &spec, GradSpace::Output).unwrap();
        let g4 = crate::netcore::predict_grad(
            &p,
            x.row(4).as_slice().unwrap(),
            &spec,
            GradSpace::Output,
        )
        .unwrap();
        let tg = t.apply(&[0.0, 3.0]).unwrap();
        for (a, b) in tg.iter().zip(&g4) {
            assert!((a - 0.5 * 3.0 * b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_empty_and_out_of_range_batches() {
        let (spec, p, x) = setup();
        assert!(matches!(
            batch_grad_matrix(&p, &[], x.view(), &spec, GradSpace::Output),
            Err(Error::EmptyBatch)
        ));
        assert!(matches!(
            batch_grad_matrix(&p, &[6], x.view(), &spec, GradSpace::Output),
            Err(Error::IndexOutOfBounds { index: 6, len: 6 })
        ));
        assert!(batch_grad_matrix(&p, &[1, 1], x.view(), &spec, GradSpace::Output).is_err());
    }
}
