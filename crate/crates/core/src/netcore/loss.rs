use serde::{Deserialize, Serialize};

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `½(y - f)²`.
    Squared,
    /// `-(y ln f + (1-y) ln(1-f))` on a probability `f`.
    Bce,
}

/// Loss value and its derivative with respect to the prediction.
pub fn loss_and_grad(pred: f64, y: f64, loss: Loss) -> (f64, f64) {
    match loss {
        Loss::Squared => {
            let r = pred - y;
            (0.5 * r * r, r)
        }
        Loss::Bce => {
            let p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let value = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            let grad = -y / p + (1.0 - y) / (1.0 - p);
            (value, grad)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_examples() {
        assert_eq!(loss_and_grad(1.5, 1.5, Loss::Squared), (0.0, 0.0));
        assert_eq!(loss_and_grad(2.0, 0.0, Loss::Squared), (2.0, 2.0));
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let h = 1e-6;
        for &y in &[0.0, 1.0, 0.3] {
            for &p in &[0.05, 0.3, 0.5, 0.81, 0.97] {
                let (_, g) = loss_and_grad(p, y, Loss::Bce);
                let num = (loss_and_grad(p + h, y, Loss::Bce).0
                    - loss_and_grad(p - h, y, Loss::Bce).0)
                    / (2.0 * h);
                assert!(
                    (g - num).abs() <= 1e-8 * g.abs().max(1.0),
                    "p={p} y={y}: {g} vs {num}"
                );
            }
        }
    }

    #[test]
    fn bce_is_finite_at_the_boundary() {
        let (v, g) = loss_and_grad(0.0, 1.0, Loss::Bce);
        assert!(v.is_finite() && g.is_finite());
        let (v, g) = loss_and_grad(1.0, 0.0, Loss::Bce);
        assert!(v.is_finite() && g.is_finite());
    }
}
