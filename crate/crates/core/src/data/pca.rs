use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{flip_count, Dataset};
use crate::error::{Error, Result};

/// First-principal-component scores of the centred rows.
pub fn pc1_scores(inputs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let (n, d) = inputs.dim();
    if n < 2 || d == 0 {
        return Err(Error::InsufficientData(format!(
            "principal direction needs n >= 2 rows, got {n}"
        )));
    }
    let mean: Vec<f64> = inputs
        .columns()
        .into_iter()
        .map(|c| c.sum() / n as f64)
        .collect();
    let centred = DMatrix::from_fn(n, d, |i, j| inputs[[i, j]] - mean[j]);
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let (top, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("d >= 1");
    let trace: f64 = eig.eigenvalues.iter().map(|v| v.abs()).sum();
    if !(lambda > 1e-12 * trace.max(f64::MIN_POSITIVE)) || lambda <= 0.0 {
        return Err(Error::DegenerateData("inputs have zero variance".into()));
    }
    let dir = eig.eigenvectors.column(top);
    Ok((0..n)
        .map(|i| {
            centred
                .row(i)
                .iter()
                .zip(dir.iter())
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Row indices ordered from most to least irregular.
///
/// Irregularity is the absolute distance of a row's first principal
/// component score from the median score. Ties keep ascending index order.
pub fn pca_irregularity_rank(inputs: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    let scores = pc1_scores(inputs)?;
    let med = median(&scores);
    let dev: Vec<f64> = scores.iter().map(|s| (s - med).abs()).collect();
    let mut order: Vec<usize> = (0..dev.len()).collect();
    order.sort_by(|&a, &b| dev[b].total_cmp(&dev[a]).then(a.cmp(&b)));
    Ok(order)
}

/// Splits rows into `(regular, irregular)` with the top `fraction` ranked irregular.
pub fn split_by_irregularity(
    inputs: ArrayView2<'_, f64>,
    fraction: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "irregular fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let order = pca_irregularity_rank(inputs)?;
    let k = flip_count(fraction, order.len());
    let mut irregular = order[..k].to_vec();
    let mut regular = order[k..].to_vec();
    irregular.sort_unstable();
    regular.sort_unstable();
    Ok((regular, irregular))
}

/// Test set with `⌊p·size⌋` irregular rows and the remainder regular.
///
/// Rows are drawn without replacement from each pool and the result is
/// shuffled; identical seeds give identical sets.
pub fn build_mixture_testset(
    regular: &Dataset,
    irregular: &Dataset,
    p: f64,
    size: usize,
    seed: u64,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!(
            "mixture proportion must lie in [0, 1], got {p}"
        )));
    }
    let k = flip_count(p, size);
    let rest = size - k;
    if k > irregular.len() || rest > regular.len() {
        return Err(Error::InsufficientData(format!(
            "mixture needs {k} irregular and {rest} regular rows, pools hold {} and {}",
            irregular.len(),
            regular.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let irr = irregular.select(&sample(&mut rng, irregular.len(), k).into_vec());
    let reg = regular.select(&sample(&mut rng, regular.len(), rest).into_vec());
    let joined = irr.concat(&reg)?;
    let order = sample(&mut rng, size, size).into_vec();
    let mut out = joined.select(&order);
    out.split = "test".into();
    out.provenance = format!("{} (mixture, irregular share {p})", irregular.provenance);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn one_dimensional_outlier_ranks_first() {
        let x = array![[0.0], [0.0], [10.0]];
        assert_eq!(pca_irregularity_rank(x.view()).unwrap()[0], 2);
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let x = Array2::from_elem((5, 3), 1.5);
        assert!(matches!(
            pca_irregularity_rank(x.view()),
            Err(Error::DegenerateData(_))
        ));
        assert!(pca_irregularity_rank(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn top_rank_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_simple_fn((300, 2), || StandardNormal.sample(&mut rng));
        let x = &x * &array![[3.0, 0.5]];
        let scores = pc1_scores(x.view()).unwrap();
        let med = median(&scores);
        let mut best = 0;
        for i in 0..scores.len() {
            if (scores[i] - med).abs() > (scores[best] - med).abs() {
                best = i;
            }
        }
        assert_eq!(pca_irregularity_rank(x.view()).unwrap()[0], best);
    }

    fn count_from(mix: &Dataset, irregular: &Dataset) -> usize {
        (0..mix.len())
            .filter(|&i| (0..irregular.len()).any(|j| irregular.inputs.row(j) == mix.inputs.row(i)))
            .count()
    }

    fn pools() -> (Dataset, Dataset) {
        let reg = Dataset::new(
            Array2::from_shape_fn((5000, 1), |(i, _)| i as f64),
            vec![0.0; 5000],
            "pool",
            "reg",
        )
        .unwrap();
        let irr = Dataset::new(
            Array2::from_shape_fn((1000, 1), |(i, _)| -1.0 - i as f64),
            vec![1.0; 1000],
            "pool",
            "irr",
        )
        .unwrap();
        (reg, irr)
    }

    #[test]
    fn mixture_counts() {
        let (reg, irr) = pools();
        let irregular_rows = |m: &Dataset| m.targets.iter().filter(|&&y| y == 1.0).count();
        assert_eq!(
            irregular_rows(&build_mixture_testset(&reg, &irr, 0.0, 400, 1).unwrap()),
            0
        );
        assert_eq!(
            irregular_rows(&build_mixture_testset(&reg, &irr, 1.0, 400, 1).unwrap()),
            400
        );
        let m = build_mixture_testset(&reg, &irr, 0.25, 4000, 1).unwrap();
        assert_eq!(m.len(), 4000);
        assert_eq!(irregular_rows(&m), 1000);
        assert_eq!(m, build_mixture_testset(&reg, &irr, 0.25, 4000, 1).unwrap());
        assert!(build_mixture_testset(&reg, &irr, 0.5, 4000, 1).is_err());
        let small = irr.select(&[0, 1, 2]);
        assert_eq!(
            count_from(
                &build_mixture_testset(&reg, &small, 0.5, 6, 2).unwrap(),
                &small
            ),
            3
        );
    }

    proptest! {
        #[test]
        fn ranking_is_permutation_equivariant(seed in any::<u64>(), n in 3usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_simple_fn((n, 3), || StandardNormal.sample(&mut rng));
            let perm = sample(&mut rng, n, n).into_vec();
            let xp = x.select(ndarray::Axis(0), &perm);
            let base = pca_irregularity_rank(x.view()).unwrap();
            let permuted: Vec<usize> = pca_irregularity_rank(xp.view()).unwrap().iter().map(|&i| perm[i]).collect();
            // Compare rankings only where deviations are well separated from their neighbours.
            let scores = pc1_scores(x.view()).unwrap();
            let med = median(&scores);
            let dev: Vec<f64> = scores.iter().map(|s| (s - med).abs()).collect();
            for k in 0..n {
                let gap_prev = if k > 0 { dev[base[k - 1]] - dev[base[k]] } else { f64::INFINITY };
                let gap_next = if k + 1 < n { dev[base[k]] - dev[base[k + 1]] } else { f64::INFINITY };
                if gap_prev.min(gap_next) > 1e-9 {
                    prop_assert_eq!(base[k], permuted[k]);
                }
            }
        }
    }
}
