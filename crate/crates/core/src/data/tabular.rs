use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use super::{standardize_columns, ColumnStats, Dataset, Manifest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// Natural log; values must be positive.
    Log,
    /// `ln(1 + v)`; values must exceed -1.
    Log1p,
}

impl Transform {
    fn apply(self, v: f64, column: &str) -> Result<f64> {
        let out = match self {
            Transform::Identity => v,
            Transform::Log => v.ln(),
            Transform::Log1p => v.ln_1p(),
        };
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::DegenerateData(format!(
                "{self:?} of {v} in column '{column}' is not finite"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub column: String,
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TabularOptions {
    pub transforms: Vec<ColumnTransform>,
    pub standardize_features: bool,
    pub standardize_target: bool,
}

/// Reads a numeric CSV with a header row into a dataset.
///
/// Per-column transforms run first (the target may be transformed too),
/// then optional standardization of features and target. The manifest
/// records the applied steps and the column statistics.
pub fn load_csv_tabular(
    path: &Path,
    target: &str,
    opts: &TabularOptions,
) -> Result<(Dataset, Manifest)> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_col = headers
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::InvalidConfig(format!("target column '{target}' not found")))?;
    for t in &opts.transforms {
        if !headers.contains(&t.column) {
            return Err(Error::InvalidConfig(format!(
                "transform names unknown column '{}'",
                t.column
            )));
        }
    }
    let transform_of = |name: &str| {
        opts.transforms
            .iter()
            .rev()
            .find(|t| t.column == name)
            .map_or(Transform::Identity, |t| t.transform)
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::with_capacity(headers.len());
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Csv(format!(
                    "row {}: column '{}' holds non-numeric value '{cell}'",
                    line + 1,
                    headers[j]
                ))
            })?;
            row.push(transform_of(&headers[j]).apply(v, &headers[j])?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} has no data rows",
            path.display()
        )));
    }
    let n = rows.len();
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&j| j != target_col).collect();
    let mut x = Array2::from_shape_fn((n, feature_cols.len()), |(i, k)| rows[i][feature_cols[k]]);
    let mut y: Vec<f64> = rows.iter().map(|r| r[target_col]).collect();

    let mut manifest = Manifest {
        source: path.display().to_string(),
        ..Default::default()
    };
    for t in &opts.transforms {
        manifest
            .transforms
            .push(format!("{:?}({})", t.transform, t.column).to_lowercase());
    }
    if opts.standardize_features {
        let stats = standardize_columns(&mut x);
        for (k, s) in stats.into_iter().enumerate() {
            manifest.columns.insert(headers[feature_cols[k]].clone(), s);
        }
        manifest.transforms.push("standardize(features)".into());
    }
    if opts.standardize_target {
        let mut col = Array2::from_shape_vec((n, 1), y).expect("n x 1");
        let s: ColumnStats = standardize_columns(&mut col)[0];
        manifest.columns.insert(target.to_string(), s);
        manifest.transforms.push("standardize(target)".into());
        y = col.into_raw_vec_and_offset().0;
    }
    manifest.counts.insert("rows".into(), n);
    manifest
        .counts
        .insert("features".into(), feature_cols.len());
    let ds = Dataset::new(x, y, "all", &manifest.source)?;
    Ok((ds, manifest))
}

/// Synthetic regression data with heavy-tailed, correlated features.
///
/// Features mix a shared Student-t factor with independent Student-t
/// noise, so the bulk is regular while the tails produce outlying rows.
/// The target is a smooth nonlinear function plus Gaussian noise.
pub fn heavy_tailed_regression(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if d < 2 {
        return Err(Error::InvalidConfig(
            "heavy-tailed generator needs d >= 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tails = StudentT::new(3.0).expect("valid");
    let noise = Normal::new(0.0, 0.1).expect("valid");
    let loadings: Vec<f64> = (0..d).map(|j| 0.4 + 0.6 * (j as f64 / d as f64)).collect();
    let weights: Vec<f64> = (0..d)
        .map(|j| if j % 2 == 0 { 1.0 } else { -0.5 } / (1.0 + j as f64).sqrt())
        .collect();
    let mut x = Array2::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let factor: f64 = tails.sample(&mut rng);
        for j in 0..d {
            x[[i, j]] = loadings[j] * factor + 0.5 * tails.sample(&mut rng);
        }
        let r = x.row(i);
        let mut target: f64 = r.iter().zip(&weights).map(|(v, w)| w * v.tanh()).sum();
        target += 0.3 * r[0] * r[1] / (1.0 + (r[0] * r[1]).abs());
        y.push(target + noise.sample(&mut rng));
    }
    Dataset::new(
        x,
        y,
        "all",
        &format!("heavy-tailed synthetic regression, d = {d}, seed {seed}"),
    )
}
