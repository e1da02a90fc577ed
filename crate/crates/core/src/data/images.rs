use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, RawImages};
use crate::error::{Error, Result};

/// Area-weighted resampling of a row-major `h×w` image to `th×tw`.
///
/// Each output pixel is the mean of the source region it covers, with
/// fractional pixel overlap weighted by area. Integer ratios reduce to
/// plain average pooling.
pub fn downsample_area(
    src: &[f64],
    (h, w): (usize, usize),
    (th, tw): (usize, usize),
) -> Result<Vec<f64>> {
    if src.len() != h * w {
        return Err(Error::DimensionMismatch {
            expected: h * w,
            got: src.len(),
        });
    }
    if th == 0 || tw == 0 || th > h || tw > w {
        return Err(Error::InvalidConfig(format!(
            "cannot downsample {h}x{w} to {th}x{tw}"
        )));
    }
    let ry = axis_weights(h, th);
    let rx = axis_weights(w, tw);
    let area = (h as f64 / th as f64) * (w as f64 / tw as f64);
    let mut out = vec![0.0; th * tw];
    for (oy, wy) in ry.iter().enumerate() {
        for (ox, wx) in rx.iter().enumerate() {
            let mut acc = 0.0;
            for &(sy, fy) in wy {
                for &(sx, fx) in wx {
                    acc += fy * fx * src[sy * w + sx];
                }
            }
            out[oy * tw + ox] = acc / area;
        }
    }
    Ok(out)
}

/// For each output cell along one axis, the overlapping source cells and overlap lengths.
fn axis_weights(n: usize, m: usize) -> Vec<Vec<(usize, f64)>> {
    let step = n as f64 / m as f64;
    (0..m)
        .map(|o| {
            let (lo, hi) = (o as f64 * step, (o + 1) as f64 * step);
            (lo.floor() as usize..(hi.ceil() as usize).min(n))
                .filter_map(|s| {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap))
                })
                .collect()
        })
        .collect()
}

/// Balanced two-class subset of `raw` as `(train, test)`.
///
/// Pixels are scaled to `[0, 1]` and downsampled; `class_a` maps to 0 and
/// `class_b` to 1. Train and test rows are disjoint draws, and each split
/// takes half its rows from each class (the extra row of an odd count goes
/// to `class_a`).
pub fn make_binary_task(
    raw: &RawImages,
    class_a: u8,
    class_b: u8,
    n_train: usize,
    n_test: usize,
    downsample_to: (usize, usize),
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if class_a == class_b {
        return Err(Error::InvalidConfig("the two classes must differ".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let halves = |n: usize| (n - n / 2, n / 2);
    let (tr_a, tr_b) = halves(n_train);
    let (te_a, te_b) = halves(n_test);
    let mut picks = Vec::new();
    for (class, need_train, need_test) in [(class_a, tr_a, te_a), (class_b, tr_b, te_b)] {
        let pool: Vec<usize> = (0..raw.len()).filter(|&i| raw.labels[i] == class).collect();
        let need = need_train + need_test;
        if pool.len() < need {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} examples, {need} requested",
                pool.len()
            )));
        }
        let chosen: Vec<usize> = sample(&mut rng, pool.len(), need)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        let label = if class == class_a { 0.0 } else { 1.0 };
        picks.push((
            chosen[..need_train].to_vec(),
            chosen[need_train..].to_vec(),
            label,
        ));
    }
    let mut train: Vec<(usize, f64)> = Vec::new();
    let mut test: Vec<(usize, f64)> = Vec::new();
    for (tr, te, label) in &picks {
        train.extend(tr.iter().map(|&i| (i, *label)));
        test.extend(te.iter().map(|&i| (i, *label)));
    }
    let train = shuffle(train, &mut rng);
    let test = shuffle(test, &mut rng);
    let note = format!(
        "classes {class_a} vs {class_b}, {}x{} area downsample",
        downsample_to.0, downsample_to.1
    );
    Ok((
        assemble(raw, &train, downsample_to, "train", &note)?,
        assemble(raw, &test, downsample_to, "test", &note)?,
    ))
}

fn shuffle<T: Copy>(items: Vec<T>, rng: &mut ChaCha8Rng) -> Vec<T> {
    sample(rng, items.len(), items.len())
        .into_iter()
        .map(|k| items[k])
        .collect()
}

fn assemble(
    raw: &RawImages,
    rows: &[(usize, f64)],
    to: (usize, usize),
    split: &str,
    note: &str,
) -> Result<Dataset> {
    let d = to.0 * to.1;
    let mut x = Array2::zeros((rows.len(), d));
    for (r, &(i, _)) in rows.iter().enumerate() {
        let px: Vec<f64> = raw.image(i).iter().map(|&b| b as f64 / 255.0).collect();
        let small = downsample_area(&px, (raw.rows, raw.cols), to)?;
        x.row_mut(r).assign(&ndarray::ArrayView1::from(&small));
    }
    Dataset::new(x, rows.iter().map(|r| r.1).collect(), split, note)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let src = vec![0.7; 28 * 28];
        let out = downsample_area(&src, (28, 28), (8, 8)).unwrap();
        assert!(out.iter().all(|v| (v - 0.7).abs() <= 1e-12));
    }

    #[test]
    fn checkerboard_pools_to_half() {
        let src: Vec<f64> = (0..256).map(|k| ((k / 16 + k % 16) % 2) as f64).collect();
        let out = downsample_area(&src, (16, 16), (8, 8)).unwrap();
        assert_eq!(out, vec![0.5; 64]);
    }

    #[test]
    fn fractional_weights_conserve_mass() {
        let src: Vec<f64> = (0..28 * 28)
            .map(|k| ((k * 37) % 101) as f64 / 100.0)
            .collect();
        let out = downsample_area(&src, (28, 28), (8, 8)).unwrap();
        let mean_src = src.iter().sum::<f64>() / src.len() as f64;
        let mean_out = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean_src - mean_out).abs() <= 1e-12);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn binary_task_counts_and_balance() {
        let raw = super::super::synthetic_digit_images(&[3, 5], 600, 1);
        let (tr, te) = make_binary_task(&raw, 3, 5, 1000, 200, (8, 8), 4).unwrap();
        assert_eq!(tr.len(), 1000);
        assert_eq!(te.len(), 200);
        assert_eq!(tr.targets.iter().filter(|&&y| y == 1.0).count(), 500);
        assert_eq!(tr.dim(), 64);
        let again = make_binary_task(&raw, 3, 5, 1000, 200, (8, 8), 4).unwrap();
        assert_eq!(tr, again.0);
        assert!(make_binary_task(&raw, 3, 5, 1200, 100, (8, 8), 4).is_err());
    }
}
