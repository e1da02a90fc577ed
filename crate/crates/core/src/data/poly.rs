use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};

/// Quadratic single-index regression task.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialTask {
    pub train: Dataset,
    pub test: Dataset,
    /// Unit-norm direction defining the target.
    pub beta: Vec<f64>,
}

/// `½(βᵀx)²`.
pub fn polynomial_target(beta: &[f64], x: &[f64]) -> f64 {
    let dot: f64 = beta.iter().zip(x).map(|(b, v)| b * v).sum();
    0.5 * dot * dot
}

/// Inputs `x ~ N(0, I/d)`, targets `½(βᵀx)²` with a unit-norm `β` drawn per seed.
pub fn polynomial_task(
    d: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<PolynomialTask> {
    if d == 0 {
        return Err(Error::InvalidConfig("polynomial task needs d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut beta: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
    beta.iter_mut().for_each(|b| *b /= norm);
    let sd = 1.0 / (d as f64).sqrt();
    let mut draw = |n: usize, split: &str| {
        let x = Array2::from_shape_simple_fn((n, d), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        });
        let y = x
            .rows()
            .into_iter()
            .map(|r| polynomial_target(&beta, r.as_slice().expect("row-major")))
            .collect();
        Dataset::new(
            x,
            y,
            split,
            &format!("quadratic single-index task, d = {d}, seed {seed}"),
        )
    };
    let train = draw(n_train, "train")?;
    let test = draw(n_test, "test")?;
    Ok(PolynomialTask { train, test, beta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_examples() {
        assert_eq!(polynomial_target(&[1.0, 0.0, 0.0], &[2.0, 0.0, 0.0]), 2.0);
        assert_eq!(polynomial_target(&[0.6, 0.8], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn beta_is_unit_and_targets_match() {
        let t = polynomial_task(100, 550, 500, 3).unwrap();
        let norm: f64 = t.beta.iter().map(|b| b * b).sum();
        assert!((norm - 1.0).abs() <= 1e-12);
        assert_eq!(
            (t.train.len(), t.test.len(), t.train.dim()),
            (550, 500, 100)
        );
        for i in 0..5 {
            assert_eq!(
                t.test.targets[i],
                polynomial_target(&t.beta, &t.test.row(i))
            );
        }
    }

    #[test]
    fn input_variance_is_one_over_d() {
        let d = 10;
        let n = 100_000;
        let t = polynomial_task(d, n, 1, 11).unwrap();
        for col in t.train.inputs.columns() {
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            // Standard error of a Gaussian sample variance is σ²·√(2/(n-1)).
            let se = (1.0 / d as f64) * (2.0 / (n - 1) as f64).sqrt();
            assert!((var - 1.0 / d as f64).abs() <= 3.0 * se, "var {var}");
        }
    }
}
