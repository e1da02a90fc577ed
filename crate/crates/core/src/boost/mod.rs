//! Gradient-boosted regression trees with explicit tree kernels.
//!
//! Stage `t` fits a regression tree to the negative squared-loss gradients
//! `y_i - F_{t-1}(x_i)`. Its leaf values are leaf means, so the stage is a
//! smoother with kernel `K_t(x, x_i) = 1{leaf(x) = leaf(x_i)} / n_leaf(x)`,
//! and the ensemble prediction can be written either directly,
//! `h0 + γ Σ_t h_t(x)`, or in kernel form, `h0 - γ Σ_t Σ_i K_t(x, x_i) g_{it}`.

mod tree;

pub use tree::{Node, RegressionTree};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_stages: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_stages: 200,
            max_depth: 3,
            learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub h0: f64,
    pub learning_rate: f64,
    pub stages: Vec<RegressionTree>,
    /// Loss gradients `g_{it} = F_{t-1}(x_i) - y_i` each stage was fit to.
    pub stage_gradients: Vec<Vec<f64>>,
    pub n_train: usize,
}

/// Sparse tree-kernel row: weight `1/n_leaf` on each member of one leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRowTree {
    pub leaf: usize,
    pub members: Vec<usize>,
    pub weight: f64,
    pub n: usize,
}

impl KernelRowTree {
    pub fn norm(&self) -> f64 {
        self.weight * (self.members.len() as f64).sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        for &i in &self.members {
            v[i] = self.weight;
        }
        v
    }
}

/// Fits an ensemble with `h0 = mean(y)`.
pub fn fit_gbt(x: ArrayView2<'_, f64>, y: &[f64], cfg: &GbtConfig) -> Result<TreeEnsemble> {
    let h0 = if y.is_empty() {
        0.0
    } else {
        y.iter().sum::<f64>() / y.len() as f64
    };
    fit_gbt_with_base(x, y, cfg, h0)
}

pub fn fit_gbt_with_base(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    cfg: &GbtConfig,
    h0: f64,
) -> Result<TreeEnsemble> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "boosting needs at least 2 rows, got {n}"
        )));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if cfg.n_stages == 0 {
        return Err(Error::InvalidConfig("n_stages must be at least 1".into()));
    }
    if !(cfg.learning_rate >= 0.0) || !cfg.learning_rate.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be non-negative, got {}",
            cfg.learning_rate
        )));
    }
    let sorted: Vec<Vec<usize>> = (0..x.ncols())
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut fitted = vec![h0; n];
    let mut stages = Vec::with_capacity(cfg.n_stages);
    let mut stage_gradients = Vec::with_capacity(cfg.n_stages);
    for _ in 0..cfg.n_stages {
        let grad: Vec<f64> = fitted.iter().zip(y).map(|(f, t)| f - t).collect();
        let target: Vec<f64> = grad.iter().map(|g| -g).collect();
        let tree = tree::fit_tree(x, &target, &sorted, cfg.max_depth);
        for (leaf, members) in tree.leaf_members.iter().enumerate() {
            for &i in members {
                fitted[i] += cfg.learning_rate * tree.leaf_values[leaf];
            }
        }
        stages.push(tree);
        stage_gradients.push(grad);
    }
    Ok(TreeEnsemble {
        h0,
        learning_rate: cfg.learning_rate,
        stages,
        stage_gradients,
        n_train: n,
    })
}

impl TreeEnsemble {
    /// `h0 + γ Σ_t h_t(x)` using the first `stages` trees.
    pub fn predict_prefix(&self, x: &[f64], stages: usize) -> f64 {
        self.h0
            + self.learning_rate
                * self.stages[..stages]
                    .iter()
                    .map(|t| t.predict(x))
                    .sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_prefix(x, self.stages.len())
    }

    pub fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| self.predict(&r.to_vec()))
            .collect()
    }

    /// `h0 - γ Σ_t Σ_i K_t(x, x_i) g_{it}`.
    pub fn predict_kernel_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (t, tree) in self.stages.iter().enumerate() {
            let leaf = tree.leaf_of(x);
            let members = &tree.leaf_members[leaf];
            let w = 1.0 / members.len() as f64;
            acc += members
                .iter()
                .map(|&i| w * self.stage_gradients[t][i])
                .sum::<f64>();
        }
        self.h0 - self.learning_rate * acc
    }

    pub fn tree_kernel_row(&self, stage: usize, x: &[f64]) -> Result<KernelRowTree> {
        let tree = self.stages.get(stage).ok_or(Error::IndexOutOfBounds {
            index: stage,
            len: self.stages.len(),
        })?;
        let leaf = tree.leaf_of(x);
        let members = tree.leaf_members[leaf].clone();
        Ok(KernelRowTree {
            leaf,
            weight: 1.0 / members.len() as f64,
            members,
            n: self.n_train,
        })
    }

    /// `‖k_t(x)‖₂` for every stage and every row of `x`: `[stage][row]`.
    pub fn kernel_row_norms(&self, x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
        self.stages
            .iter()
            .map(|tree| {
                x.rows()
                    .into_iter()
                    .map(|r| {
                        let leaf = tree.leaf_of(r.as_slice().expect("contiguous row"));
                        1.0 / (tree.leaf_members[leaf].len() as f64).sqrt()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `(1/T)Σ_t max_j ‖k_t(x_j)‖` over test rows divided by the same over train rows.
/// Both arguments are indexed `[step][row]`.
pub fn kernel_norm_ratio(test_norms: &[Vec<f64>], train_norms: &[Vec<f64>]) -> Result<f64> {
    fn mean_max(norms: &[Vec<f64>], what: &str) -> Result<f64> {
        if norms.is_empty() || norms.iter().any(|r| r.is_empty()) {
            return Err(Error::InsufficientData(format!("no {what} kernel rows")));
        }
        Ok(norms
            .iter()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .sum::<f64>()
            / norms.len() as f64)
    }
    let num = mean_max(test_norms, "test")?;
    let den = mean_max(train_norms, "train")?;
    if den == 0.0 {
        return Err(Error::UndefinedNormalization(
            "training kernel rows are all zero".into(),
        ));
    }
    Ok(num / den)
}

/// `(MSE^p_NN − MSE^p_GBT) / (MSE^0_NN − MSE^0_GBT)`.
pub fn relative_mse(nn_mse: f64, gbt_mse: f64, nn_mse0: f64, gbt_mse0: f64) -> Result<f64> {
    let den = nn_mse0 - gbt_mse0;
    if den == 0.0 || !den.is_finite() {
        return Err(Error::UndefinedNormalization(format!(
            "baseline errors coincide (nn {nn_mse0}, gbt {gbt_mse0})"
        )));
    }
    Ok((nn_mse - gbt_mse) / den)
}
