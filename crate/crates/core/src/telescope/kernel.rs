use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::netcore::{GradSpace, Network, ParamVector};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unmasked `∇f(x)ᵀ∇f(x')` at one parameter value.
pub fn raw_kernel(
    net: &Network,
    params: &ParamVector,
    x: &[f64],
    xi: &[f64],
    space: GradSpace,
) -> Result<f64> {
    let a = net.predict_grad(params, x, space)?;
    let b = net.predict_grad(params, xi, space)?;
    Ok(dot(&a, &b))
}

/// Batch-masked tangent kernel `1{i∈B}/|B| · ∇f(x)ᵀ∇f(x_i)`.
pub fn tangent_kernel(
    net: &Network,
    params: &ParamVector,
    x: &[f64],
    xi: &[f64],
    in_batch: bool,
    batch_size: usize,
) -> Result<f64> {
    cross_temporal_kernel(net, params, params, x, xi, in_batch, batch_size)
}

/// `1{i∈B_k}/|B_k| · ∇f_{θ_t}(x)ᵀ∇f_{θ_k}(x_i)`, gradients taken at two parameter values.
pub fn cross_temporal_kernel(
    net: &Network,
    params_t: &ParamVector,
    params_k: &ParamVector,
    x: &[f64],
    xi: &[f64],
    in_batch: bool,
    batch_size: usize,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::EmptyBatch);
    }
    if !in_batch {
        return Ok(0.0);
    }
    let a = net.predict_grad(params_t, x, GradSpace::Output)?;
    let b = net.predict_grad(params_k, xi, GradSpace::Output)?;
    Ok(dot(&a, &b) / batch_size as f64)
}

/// Kernel rows `k_t(x) = [K_t(x, x_1), …, K_t(x, x_n)]` for a set of query inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSnapshot {
    pub t: usize,
    /// `queries × n`.
    pub values: Array2<f64>,
}

impl KernelSnapshot {
    /// Rows at `params` against every training input. With `batch = Some(B)`
    /// columns outside `B` are zero and the rest are scaled by `1/|B|`;
    /// `None` gives the raw, unmasked kernel.
    pub fn compute(
        net: &Network,
        params: &ParamVector,
        queries: ArrayView2<'_, f64>,
        train: ArrayView2<'_, f64>,
        batch: Option<&[usize]>,
        space: GradSpace,
        t: usize,
    ) -> Result<Self> {
        let qc = net.forward_batch(params, queries)?;
        let tc = net.forward_batch(params, train)?;
        let qf = net.factors(params, &qc, space)?;
        let tf = net.factors(params, &tc, space)?;
        let mut values = Network::kernel(&qf, &tf);
        if let Some(b) = batch {
            if b.is_empty() {
                return Err(Error::EmptyBatch);
            }
            let n = train.nrows();
            let mut mask = vec![0.0; n];
            for &i in b {
                if i >= n {
                    return Err(Error::IndexOutOfBounds { index: i, len: n });
                }
                mask[i] = 1.0 / b.len() as f64;
            }
            for mut row in values.rows_mut() {
                for (v, m) in row.iter_mut().zip(&mask) {
                    *v *= m;
                }
            }
        }
        Ok(KernelSnapshot { t, values })
    }

    /// `‖k_t(x_row)‖₂`.
    pub fn row_norm(&self, row: usize) -> Result<f64> {
        if row >= self.values.nrows() {
            return Err(Error::IndexOutOfBounds {
                index: row,
                len: self.values.nrows(),
            });
        }
        Ok(self
            .values
            .row(row)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt())
    }

    /// Norms of every row.
    pub fn row_norms(&self) -> Vec<f64> {
        self.values
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// `‖k_t(x)‖₂` for a row of a snapshot.
pub fn kernel_row_norm(snapshot: &KernelSnapshot, row: usize) -> Result<f64> {
    snapshot.row_norm(row)
}
