use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

const TEMPLATES: [[f64; 12]; 10] = [
    [5.0, 6.0, 6.5, 6.75, 7.0, 7.0, 7.0, 7.0, 6.75, 6.5, 6.0, 5.0],
    [5.0, 3.0, 3.0, 3.4, 3.8, 4.2, 4.6, 5.0, 5.4, 5.8, 5.0, 5.0],
    [5.0, 6.0, 6.5, 6.5, 6.0, 5.25, 4.75, 4.0, 3.5, 3.5, 4.0, 5.0],
    [5.0, 6.0, 6.5, 6.5, 6.0, 5.0, 5.0, 6.0, 6.5, 6.5, 6.0, 5.0],
    [5.0, 4.4, 3.8, 3.2, 2.6, 2.6, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0],
    [5.0, 3.0, 3.0, 3.0, 3.0, 5.0, 6.0, 6.5, 6.5, 6.0, 4.5, 5.0],
    [5.0, 4.0, 3.5, 3.25, 3.0, 3.0, 3.0, 3.0, 3.25, 3.5, 4.0, 5.0],
    [5.0, 7.0, 7.0, 6.6, 6.2, 5.8, 5.4, 5.0, 4.6, 4.2, 5.0, 5.0],
    [5.0, 4.0, 3.5, 3.5, 4.0, 5.0, 5.0, 4.0, 3.5, 3.5, 4.0, 5.0],
    [5.0, 4.0, 3.5, 3.5, 4.0, 5.0, 5.0, 5.0, 5.0, 4.7, 4.3, 5.0],
];

const PAD_MIN: usize = 36;
const PAD_MAX: usize = 60;
const MAX_SHIFT: usize = 48;
const SCALE_COEFF: f64 = 0.4;
const CORR_NOISE: f64 = 0.25;
const IID_NOISE: f64 = 0.02;
const SHEAR: f64 = 0.75;
const SMOOTH_SIGMA: f64 = 2.0;
const SEQ_LEN: usize = 40;

/// Two-class task drawn from the 1-D digit-template generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mnist1dConfig {
    pub class_a: u8,
    pub class_b: u8,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for Mnist1dConfig {
    fn default() -> Self {
        Mnist1dConfig {
            class_a: 0,
            class_b: 1,
            n_train: 800,
            n_test: 1000,
            seed: 42,
        }
    }
}

fn template(class: usize) -> Vec<f64> {
    let t = &TEMPLATES[class];
    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    let std = (t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let z: Vec<f64> = t.iter().map(|v| (v - mean) / std).collect();
    z.iter().map(|v| (v - z[0]) / 6.0).collect()
}

/// Linear resampling onto `n` evenly spaced points spanning the same interval.
fn resample(x: &[f64], n: usize) -> Vec<f64> {
    let last = (x.len() - 1) as f64;
    (0..n)
        .map(|j| {
            let pos = j as f64 * last / (n - 1) as f64;
            let i = (pos.floor() as usize).min(x.len() - 2);
            let frac = pos - i as f64;
            x[i] + frac * (x[i + 1] - x[i])
        })
        .collect()
}

/// Gaussian smoothing with mirrored boundaries and a `4σ` truncation radius.
fn gaussian_smooth(x: &[f64], sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma + 0.5) as isize;
    let mut w: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let n = x.len() as isize;
    let mirror = |mut i: isize| loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    };
    (0..n)
        .map(|i| {
            (-radius..=radius)
                .zip(&w)
                .map(|(k, wk)| wk * x[mirror(i + k)])
                .sum()
        })
        .collect()
}

fn transform(class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = template(class);
    let pad = PAD_MIN + (rng.random::<f64>() * (PAD_MAX - PAD_MIN + 1) as f64) as usize;
    let mut x: Vec<f64> = base.iter().map(|v| v + 1e-8).collect();
    x.extend(std::iter::repeat_n(0.0, pad));
    let mut x = resample(&x, base.len() + PAD_MAX);
    let scale = 1.0 + SCALE_COEFF * (rng.random::<f64>() - 0.5);
    x.iter_mut().for_each(|v| *v *= scale);
    let k = rng.random_range(0..MAX_SHIFT);
    x.rotate_right(k);
    let raw: Vec<f64> = (0..x.len())
        .map(|_| CORR_NOISE * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let corr = gaussian_smooth(&raw, SMOOTH_SIGMA);
    for (v, c) in x.iter_mut().zip(&corr) {
        if *v == 0.0 {
            *v = *c;
        }
    }
    for v in x.iter_mut() {
        *v += IID_NOISE * rng.sample::<f64, _>(StandardNormal);
    }
    let coeff = SHEAR * (rng.random::<f64>() - 0.5);
    let len = x.len();
    for (i, v) in x.iter_mut().enumerate() {
        *v -= coeff * (-0.5 + i as f64 / (len - 1) as f64);
    }
    resample(&x, SEQ_LEN)
}

/// Generates a balanced two-class 1-D signal task as `(train, test)`.
///
/// Samples are produced class by class, shuffled, standardized with one
/// global mean and standard deviation over all generated values, and split.
/// Labels are 0 for `class_a` and 1 for `class_b`.
pub fn mnist1d_binary_task(cfg: &Mnist1dConfig) -> Result<(Dataset, Dataset)> {
    if cfg.class_a > 9 || cfg.class_b > 9 || cfg.class_a == cfg.class_b {
        return Err(Error::InvalidConfig(
            "classes must be two distinct digits in 0..=9".into(),
        ));
    }
    let total = cfg.n_train + cfg.n_test;
    if cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(Error::InsufficientData(
            "both splits need at least one row".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut xs = Vec::with_capacity(total);
    let mut ys = Vec::with_capacity(total);
    for (label, class) in [(0.0, cfg.class_a), (1.0, cfg.class_b)] {
        let count = if label == 0.0 {
            total - total / 2
        } else {
            total / 2
        };
        for _ in 0..count {
            xs.push(transform(class as usize, &mut rng));
            ys.push(label);
        }
    }
    let order = sample(&mut rng, total, total).into_vec();
    let count = (total * SEQ_LEN) as f64;
    let mean = xs.iter().flatten().sum::<f64>() / count;
    let std = (xs.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / count).sqrt();
    let build = |rows: &[usize], split: &str| {
        let mut x = Array2::zeros((rows.len(), SEQ_LEN));
        for (r, &i) in rows.iter().enumerate() {
            for (c, v) in xs[i].iter().enumerate() {
                x[[r, c]] = (v - mean) / std;
            }
        }
        let note = format!(
            "1-D digit templates {} vs {}, seed {}",
            cfg.class_a, cfg.class_b, cfg.seed
        );
        Dataset::new(x, rows.iter().map(|&i| ys[i]).collect(), split, &note)
    };
    Ok((
        build(&order[..cfg.n_train], "train")?,
        build(&order[cfg.n_train..], "test")?,
    ))
}
