//! Optimizers that turn a raw batch gradient `T_t g_t` into a parameter
//! update `Δθ_t`, keeping every internal buffer inspectable.
//!
//! | kind           | update                                                   |
//! |----------------|----------------------------------------------------------|
//! | `sgd`          | `Δθ = -γ g`                                              |
//! | `momentum`     | `m = β₁m + (1-β₁)g`, `Δθ = -γ m / (1-β₁ᵗ)`               |
//! | `weight_decay` | `Δθ = -γ (g + λθ)`                                       |
//! | `adamw`        | `Δθ = -γ (m/(1-β₁ᵗ) / φ + λθ)`, `φ = √(v/(1-β₂ᵗ)) + ε` |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Sgd,
    Momentum,
    WeightDecay,
    Adamw,
}

impl OptimKind {
    pub fn uses_momentum(self) -> bool {
        matches!(self, OptimKind::Momentum | OptimKind::Adamw)
    }

    pub fn uses_decay(self) -> bool {
        matches!(self, OptimKind::WeightDecay | OptimKind::Adamw)
    }

    pub fn is_adaptive(self) -> bool {
        self == OptimKind::Adamw
    }
}

/// Step-size schedule: optional linear warmup, then stepwise decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    /// Step `t ≤ W` uses `base·t/W`.
    #[serde(default)]
    pub warmup_steps: usize,
    /// Steps after each milestone are multiplied by `decay_factor`.
    #[serde(default)]
    pub decay_milestones: Vec<usize>,
    #[serde(default = "one")]
    pub decay_factor: f64,
}

fn one() -> f64 {
    1.0
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        LrSchedule {
            base,
            warmup_steps: 0,
            decay_milestones: Vec::new(),
            decay_factor: 1.0,
        }
    }

    /// `γ_t` for the 1-based step `t`.
    pub fn at(&self, t: usize) -> f64 {
        let mut g = self.base;
        if self.warmup_steps > 0 && t <= self.warmup_steps {
            g *= t as f64 / self.warmup_steps as f64;
        }
        for &m in &self.decay_milestones {
            if t > m {
                g *= self.decay_factor;
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    pub eps: f64,
}

impl OptimConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimConfig {
            kind: OptimKind::Sgd,
            lr: LrSchedule::constant(lr),
            beta1: 0.9,
            beta2: 0.999,
            lambda: 0.0,
            eps: 1e-8,
        }
    }

    pub fn momentum(lr: f64, beta1: f64) -> Self {
        OptimConfig {
            kind: OptimKind::Momentum,
            beta1,
            ..Self::sgd(lr)
        }
    }

    pub fn weight_decay(lr: f64, lambda: f64) -> Self {
        OptimConfig {
            kind: OptimKind::WeightDecay,
            lambda,
            ..Self::sgd(lr)
        }
    }

    pub fn adamw(lr: f64, beta1: f64, beta2: f64, lambda: f64, eps: f64) -> Self {
        OptimConfig {
            kind: OptimKind::Adamw,
            lr: LrSchedule::constant(lr),
            beta1,
            beta2,
            lambda,
            eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.beta1) {
            return bad(format!("beta1 must lie in [0, 1), got {}", self.beta1));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("beta2 must lie in [0, 1), got {}", self.beta2));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.lr.base > 0.0) || !self.lr.base.is_finite() {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.lr.base
            ));
        }
        if !(self.lr.decay_factor > 0.0) || !self.lr.decay_factor.is_finite() {
            return bad(format!(
                "decay factor must be positive, got {}",
                self.lr.decay_factor
            ));
        }
        if self.lr.decay_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad("decay milestones must be strictly increasing".into());
        }
        Ok(())
    }
}

/// Optimizer buffers. `t` counts completed steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub t: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    phi: Option<Vec<f64>>,
    last_lr: Option<f64>,
}

impl OptimState {
    pub fn new(p: usize) -> Self {
        OptimState {
            t: 0,
            m: vec![0.0; p],
            v: vec![0.0; p],
            phi: None,
            last_lr: None,
        }
    }

    /// Rebuilds a state saved with [`OptimState::scaling`] and [`OptimState::last_lr`].
    pub fn from_parts(
        t: usize,
        m: Vec<f64>,
        v: Vec<f64>,
        phi: Option<Vec<f64>>,
        last_lr: Option<f64>,
    ) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: m.len(),
                got: v.len(),
            });
        }
        if let Some(p) = &phi {
            if p.len() != m.len() {
                return Err(Error::DimensionMismatch {
                    expected: m.len(),
                    got: p.len(),
                });
            }
        }
        Ok(OptimState {
            t,
            m,
            v,
            phi,
            last_lr,
        })
    }

    /// `φ_t` if an adaptive step has been taken.
    pub fn scaling(&self) -> Option<&[f64]> {
        self.phi.as_deref()
    }

    /// The scaling vector `φ_t` of the most recent adaptive step.
    pub fn expose_scaling(&self) -> Result<&[f64]> {
        self.phi.as_deref().ok_or(Error::ScalingUnavailable)
    }

    /// `γ_t` of the most recent step.
    pub fn last_lr(&self) -> Option<f64> {
        self.last_lr
    }

    /// Takes one step and returns `Δθ_t`.
    pub fn step(
        &mut self,
        cfg: &OptimConfig,
        raw_grad: &[f64],
        params: &[f64],
    ) -> Result<Vec<f64>> {
        let p = self.m.len();
        if raw_grad.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: raw_grad.len(),
            });
        }
        if params.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: params.len(),
            });
        }
        let t = self.t + 1;
        let lr = cfg.lr.at(t);
        let b1 = cfg.beta1;
        let b2 = cfg.beta2;
        let delta: Vec<f64> = match cfg.kind {
            OptimKind::Sgd => raw_grad.iter().map(|g| -lr * g).collect(),
            OptimKind::Momentum => {
                let corr = 1.0 - b1.powi(t as i32);
                self.m
                    .iter_mut()
                    .zip(raw_grad)
                    .map(|(m, g)| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        -lr * (*m / corr)
                    })
                    .collect()
            }
            OptimKind::WeightDecay => raw_grad
                .iter()
                .zip(params)
                .map(|(g, th)| -lr * (g + cfg.lambda * th))
                .collect(),
            OptimKind::Adamw => {
                let c1 = 1.0 - b1.powi(t as i32);
                let c2 = 1.0 - b2.powi(t as i32);
                let mut phi = vec![0.0; p];
                let mut delta = vec![0.0; p];
                for j in 0..p {
                    let g = raw_grad[j];
                    self.m[j] = b1 * self.m[j] + (1.0 - b1) * g;
                    self.v[j] = b2 * self.v[j] + (1.0 - b2) * g * g;
                    phi[j] = (self.v[j] / c2).sqrt() + cfg.eps;
                    delta[j] = -lr * ((self.m[j] / c1) / phi[j] + cfg.lambda * params[j]);
                }
                self.phi = Some(phi);
                delta
            }
        };
        self.t = t;
        self.last_lr = Some(lr);
        Ok(delta)
    }
}

/// Functional form of [`OptimState::step`].
pub fn optim_step(
    state: &OptimState,
    cfg: &OptimConfig,
    raw_grad: &[f64],
    params: &[f64],
) -> Result<(Vec<f64>, OptimState)> {
    let mut next = state.clone();
    let delta = next.step(cfg, raw_grad, params)?;
    Ok((delta, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grads(p: usize, steps: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..steps)
            .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn run(cfg: &OptimConfig, theta0: &[f64], grads: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut st = OptimState::new(theta0.len());
        let mut theta = theta0.to_vec();
        let mut out = Vec::new();
        for g in grads {
            let d = st.step(cfg, g, &theta).unwrap();
            for (th, dd) in theta.iter_mut().zip(&d) {
                *th += dd;
            }
            out.push(d);
        }
        out
    }

    #[test]
    fn degenerate_momentum_and_decay_equal_sgd() {
        let grads = random_grads(5, 20, 1);
        let theta0 = vec![0.3, -0.1, 2.0, 0.0, 1.0];
        let sgd = run(&OptimConfig::sgd(0.05), &theta0, &grads);
        assert_eq!(run(&OptimConfig::momentum(0.05, 0.0), &theta0, &grads), sgd);
        assert_eq!(
            run(&OptimConfig::weight_decay(0.05, 0.0), &theta0, &grads),
            sgd
        );
    }

    #[test]
    fn first_momentum_step_is_sgd() {
        let grads = random_grads(4, 1, 2);
        let theta0 = vec![0.0; 4];
        let a = run(&OptimConfig::momentum(0.1, 0.9), &theta0, &grads);
        let b = run(&OptimConfig::sgd(0.1), &theta0, &grads);
        for (x, y) in a[0].iter().zip(&b[0]) {
            assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
    }

    #[test]
    fn momentum_matches_explicit_weighted_sum() {
        let (b1, lr) = (0.8, 0.01);
        let grads = random_grads(3, 15, 3);
        let deltas = run(&OptimConfig::momentum(lr, b1), &[0.0; 3], &grads);
        for t in 1..=15 {
            for j in 0..3 {
                let sum: f64 = (1..=t)
                    .map(|k| b1.powi((t - k) as i32) * grads[k - 1][j])
                    .sum();
                let expect = -lr * (1.0 - b1) / (1.0 - b1.powi(t as i32)) * sum;
                assert!((deltas[t - 1][j] - expect).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn constant_gradient_sgd_is_linear_in_t() {
        let g = vec![1.0, -2.0];
        let cfg = OptimConfig::sgd(0.25);
        let mut st = OptimState::new(2);
        let mut theta = vec![1.0, 1.0];
        for _ in 0..8 {
            let d = st.step(&cfg, &g, &theta).unwrap();
            theta[0] += d[0];
            theta[1] += d[1];
        }
        assert_eq!(theta, vec![1.0 - 8.0 * 0.25, 1.0 + 8.0 * 0.5]);
    }

    #[test]
    fn weight_decay_matches_closed_form() {
        let (lr, lam) = (0.03, 0.7);
        let grads = random_grads(4, 40, 4);
        let theta0 = vec![1.0, -0.5, 0.25, 2.0];
        let deltas = run(&OptimConfig::weight_decay(lr, lam), &theta0, &grads);
        let mut theta = theta0.clone();
        for d in &deltas {
            for (th, dd) in theta.iter_mut().zip(d) {
                *th += dd;
            }
        }
        let t = grads.len();
        let r = 1.0 - lam * lr;
        for j in 0..4 {
            let hist: f64 = (1..=t)
                .map(|k| r.powi((t - k) as i32) * grads[k - 1][j])
                .sum();
            let closed = r.powi(t as i32) * theta0[j] - lr * hist;
            assert!(
                (closed - theta[j]).abs() <= 1e-12,
                "{closed} vs {}",
                theta[j]
            );
        }
    }

    #[test]
    fn scaling_after_one_step_is_abs_grad_plus_eps() {
        let cfg = OptimConfig::adamw(1e-3, 0.9, 0.99, 0.1, 1e-8);
        let mut st = OptimState::new(3);
        assert!(matches!(
            st.expose_scaling(),
            Err(Error::ScalingUnavailable)
        ));
        let g = [0.5, -2.0, 0.0];
        st.step(&cfg, &g, &[0.0; 3]).unwrap();
        let phi = st.expose_scaling().unwrap();
        for (f, gi) in phi.iter().zip(&g) {
            assert!((f - (gi.abs() + 1e-8)).abs() <= 1e-15 * (1.0 + gi.abs()));
        }
        assert_eq!(phi[2], 1e-8);
    }

    #[test]
    fn scaling_replays_from_gradient_history() {
        let (b2, eps) = (0.95, 1e-6);
        let cfg = OptimConfig::adamw(1e-3, 0.9, b2, 0.0, eps);
        let grads = random_grads(6, 12, 5);
        let mut st = OptimState::new(6);
        for g in &grads {
            st.step(&cfg, g, &[0.0; 6]).unwrap();
        }
        let t = grads.len();
        for j in 0..6 {
            let s: f64 = (1..=t)
                .map(|k| b2.powi((t - k) as i32) * grads[k - 1][j].powi(2))
                .sum();
            let phi = ((1.0 - b2) / (1.0 - b2.powi(t as i32)) * s).sqrt() + eps;
            assert!((st.expose_scaling().unwrap()[j] - phi).abs() <= 1e-12);
        }
    }

    #[test]
    fn warmup_and_decay_schedule() {
        let s = LrSchedule {
            base: 1.0,
            warmup_steps: 4,
            decay_milestones: vec![10, 20],
            decay_factor: 0.1,
        };
        assert_eq!(s.at(1), 0.25);
        assert_eq!(s.at(4), 1.0);
        assert_eq!(s.at(10), 1.0);
        assert!((s.at(11) - 0.1).abs() < 1e-15);
        assert!((s.at(21) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_hyperparameters() {
        assert!(OptimConfig::momentum(0.1, 1.0).validate().is_err());
        assert!(OptimConfig::weight_decay(0.1, -1.0).validate().is_err());
        assert!(OptimConfig::sgd(0.0).validate().is_err());
        assert!(OptimConfig::adamw(0.1, 0.9, 0.99, 0.0, 0.0)
            .validate()
            .is_err());
        assert!(OptimConfig::adamw(0.1, 0.9, 0.99, 0.0, 1e-8)
            .validate()
            .is_ok());
    }
}
