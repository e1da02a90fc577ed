use crate::data::{
    add_label_noise, heavy_tailed_regression, load_csv_tabular, load_idx, make_binary_task,
    mnist1d_binary_task, polynomial_task, standardize_columns, synthetic_digit_images,
    ColumnTransform, Dataset, Manifest, Mnist1dConfig, RawImages, TabularOptions, Transform,
};
use crate::error::{Error, Result};

use super::config::{DataSource, DatasetSection, ExperimentConfig};

/// Raw images for the image sources, enough for both splits of `classes`.
fn raw_images(d: &DatasetSection, classes: [u8; 2]) -> Result<RawImages> {
    match d.source {
        DataSource::SyntheticDigits => {
            let per_class = (d.n_train - d.n_train / 2) + (d.n_test - d.n_test / 2);
            Ok(synthetic_digit_images(&classes, per_class, d.seed))
        }
        DataSource::Idx => {
            let need = |p: &Option<std::path::PathBuf>, key: &str| {
                p.as_ref()
                    .map(|p| ExperimentConfig::data_path(p))
                    .ok_or_else(|| Error::Config(format!("dataset.{key} is required for IDX data")))
            };
            load_idx(&need(&d.images, "images")?, &need(&d.labels, "labels")?)
        }
        _ => Err(Error::Config(format!(
            "{:?} does not provide images",
            d.source
        ))),
    }
}

/// Two-class task on `classes` drawn from the configured source.
pub fn binary_task(d: &DatasetSection, classes: [u8; 2]) -> Result<(Dataset, Dataset)> {
    match d.source {
        DataSource::SyntheticDigits | DataSource::Idx => {
            let raw = raw_images(d, classes)?;
            make_binary_task(
                &raw,
                classes[0],
                classes[1],
                d.n_train,
                d.n_test,
                (d.downsample[0], d.downsample[1]),
                d.seed,
            )
        }
        DataSource::Mnist1d => mnist1d_binary_task(&Mnist1dConfig {
            class_a: classes[0],
            class_b: classes[1],
            n_train: d.n_train,
            n_test: d.n_test,
            seed: d.seed,
        }),
        _ => Err(Error::Config(format!(
            "{:?} is not a classification source",
            d.source
        ))),
    }
}

/// Train and test sets for the training-loop experiments, label noise applied.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.dataset;
    let (train, test) = match d.source {
        DataSource::Polynomial => {
            let task = polynomial_task(d.dim, d.n_train, d.n_test, d.seed)?;
            (task.train, task.test)
        }
        DataSource::Csv | DataSource::HeavyTailed => {
            let full = tabular_pool(cfg)?.0;
            if d.n_train + d.n_test > full.len() {
                return Err(Error::InsufficientData(format!(
                    "{} rows requested, the table has {}",
                    d.n_train + d.n_test,
                    full.len()
                )));
            }
            let (a, b) = crate::data::shuffled_split(full.len(), d.n_train, d.seed)?;
            (
                full.select(&a).with_split("train"),
                full.select(&b[..d.n_test]).with_split("test"),
            )
        }
        _ => binary_task(d, d.classes)?,
    };
    let train = if d.label_noise > 0.0 {
        add_label_noise(&train, d.label_noise, d.seed ^ 0x004E_015E)?
    } else {
        train
    };
    Ok((train, test))
}

/// Every row of a tabular source with standardized features and target.
pub fn tabular_pool(cfg: &ExperimentConfig) -> Result<(Dataset, Option<Manifest>)> {
    let d = &cfg.dataset;
    match d.source {
        DataSource::HeavyTailed => {
            let mut ds = heavy_tailed_regression(d.n_total, d.dim, d.seed)?;
            standardize_columns(&mut ds.inputs);
            let mut y =
                ndarray::Array2::from_shape_vec((ds.len(), 1), ds.targets.clone()).expect("n x 1");
            standardize_columns(&mut y);
            ds.targets = y.into_raw_vec_and_offset().0;
            Ok((ds, None))
        }
        DataSource::Csv => {
            let path = d
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("dataset.path is required for CSV data".into()))?;
            let target = d
                .target
                .as_ref()
                .ok_or_else(|| Error::Config("dataset.target is required for CSV data".into()))?;
            let opts = TabularOptions {
                transforms: d
                    .log_columns
                    .iter()
                    .map(|c| ColumnTransform {
                        column: c.clone(),
                        transform: Transform::Log1p,
                    })
                    .collect(),
                standardize_features: true,
                standardize_target: true,
            };
            let (ds, manifest) =
                load_csv_tabular(&ExperimentConfig::data_path(path), target, &opts)?;
            Ok((ds, Some(manifest)))
        }
        _ => Err(Error::Config(format!(
            "{:?} is not a tabular source",
            d.source
        ))),
    }
}
