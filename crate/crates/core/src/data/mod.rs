//! Dataset loading, preprocessing, corruption, and synthetic task generators.

mod digits;
mod idx;
mod images;
mod mnist1d;
mod pca;
mod poly;
mod tabular;

pub use digits::synthetic_digit_images;
pub use idx::{
    load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, RawImages,
};
pub use images::{downsample_area, make_binary_task};
pub use mnist1d::{mnist1d_binary_task, Mnist1dConfig};
pub use pca::{build_mixture_testset, pca_irregularity_rank, split_by_irregularity};
pub use poly::{polynomial_task, PolynomialTask};
pub use tabular::{
    heavy_tailed_regression, load_csv_tabular, ColumnTransform, TabularOptions, Transform,
};

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs, targets and a short provenance note.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Vec<f64>,
    pub split: String,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        inputs: Array2<f64>,
        targets: Vec<f64>,
        split: &str,
        provenance: &str,
    ) -> Result<Self> {
        if inputs.nrows() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.nrows(),
                got: targets.len(),
            });
        }
        let ds = Dataset {
            inputs,
            targets,
            split: split.into(),
            provenance: provenance.into(),
        };
        ds.check_finite()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.inputs.row(i).to_vec()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), rows),
            targets: rows.iter().map(|&i| self.targets[i]).collect(),
            split: self.split.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Row-wise concatenation; provenance and split come from `self`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let inputs = ndarray::concatenate(Axis(0), &[self.inputs.view(), other.inputs.view()])
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut targets = self.targets.clone();
        targets.extend(&other.targets);
        Ok(Dataset {
            inputs,
            targets,
            split: self.split.clone(),
            provenance: self.provenance.clone(),
        })
    }

    pub fn with_split(mut self, split: &str) -> Self {
        self.split = split.into();
        self
    }

    pub fn check_finite(&self) -> Result<()> {
        if self
            .inputs
            .iter()
            .chain(&self.targets)
            .any(|v| !v.is_finite())
        {
            return Err(Error::DegenerateData("non-finite value in dataset".into()));
        }
        Ok(())
    }

    pub fn is_binary(&self) -> bool {
        self.targets.iter().all(|&t| t == 0.0 || t == 1.0)
    }
}

/// Flips exactly `⌊rate·n⌋` uniformly chosen binary labels.
pub fn add_label_noise(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!(
            "label noise rate must lie in [0, 1], got {rate}"
        )));
    }
    if !ds.is_binary() {
        return Err(Error::InvalidConfig(
            "label noise needs {0, 1} targets".into(),
        ));
    }
    let n = ds.len();
    let k = flip_count(rate, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    for i in sample(&mut rng, n, k).into_iter() {
        out.targets[i] = 1.0 - out.targets[i];
    }
    Ok(out)
}

/// `⌊rate·n⌋`, robust to representation error in `rate` (0.29·100 is 29).
pub(crate) fn flip_count(rate: f64, n: usize) -> usize {
    let exact = rate * n as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() <= 1e-9 * n.max(1) as f64 {
        rounded as usize
    } else {
        exact.floor() as usize
    }
}

/// Source, seed, transforms and counts of a prepared dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: String,
    pub seed: Option<u64>,
    pub transforms: Vec<String>,
    pub counts: BTreeMap<String, usize>,
    #[serde(default)]
    pub columns: BTreeMap<String, ColumnStats>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Standardizes columns in place (population variance); returns the statistics.
/// Constant columns are centred and left with unit scale.
pub fn standardize_columns(x: &mut Array2<f64>) -> Vec<ColumnStats> {
    let n = x.nrows() as f64;
    x.columns_mut()
        .into_iter()
        .map(|mut col| {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            col.mapv_inplace(|v| (v - mean) / std);
            ColumnStats { mean, std }
        })
        .collect()
}

/// Applies precomputed column statistics.
pub fn apply_standardization(x: &mut Array2<f64>, stats: &[ColumnStats]) {
    for (mut col, s) in x.columns_mut().into_iter().zip(stats) {
        col.mapv_inplace(|v| (v - s.mean) / s.std);
    }
}

/// Deterministic shuffled split into `(first, second)` of sizes `(k, n - k)`.
pub fn shuffled_split(n: usize, k: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if k > n {
        return Err(Error::InsufficientData(format!(
            "cannot take {k} of {n} rows"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm = sample(&mut rng, n, n).into_vec();
    Ok((perm[..k].to_vec(), perm[k..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(n: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i + j) as f64);
        let y = (0..n).map(|i| (i % 2) as f64).collect();
        Dataset::new(x, y, "train", "fixture").unwrap()
    }

    #[test]
    fn label_noise_counts() {
        let ds = binary(1000);
        assert_eq!(add_label_noise(&ds, 0.0, 1).unwrap(), ds);
        let all = add_label_noise(&ds, 1.0, 1).unwrap();
        assert!(all
            .targets
            .iter()
            .zip(&ds.targets)
            .all(|(a, b)| *a == 1.0 - b));
        let a = add_label_noise(&ds, 0.2, 7).unwrap();
        let flips = a
            .targets
            .iter()
            .zip(&ds.targets)
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(flips, 200);
        assert_eq!(a, add_label_noise(&ds, 0.2, 7).unwrap());
        assert_ne!(a, add_label_noise(&ds, 0.2, 8).unwrap());
        assert_eq!(flip_count(0.29, 100), 29);
        assert_eq!(flip_count(0.15, 794), 119);
    }

    #[test]
    fn standardization_contract() {
        let mut x = Array2::from_shape_fn((50, 3), |(i, j)| {
            ((i * 7 + j * 3) % 11) as f64 * (j + 1) as f64
        });
        standardize_columns(&mut x);
        for col in x.columns() {
            let mean = col.sum() / 50.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() <= 1e-12);
            assert!((var - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let x = Array2::from_elem((1, 1), f64::NAN);
        assert!(Dataset::new(x, vec![0.0], "train", "").is_err());
    }
}
