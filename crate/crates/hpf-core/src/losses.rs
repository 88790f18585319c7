//! Exp-concave per-round loss functions.
//!
//! A loss `ℓ` is η-exp-concave when `e^(−ηℓ)` is concave; that curvature is
//! what buys every logarithmic regret bound in this crate. Two kinds are
//! provided: squared error over a declared prediction range, and binary log
//! loss with a probability clamp. Both expose analytic gradients with respect
//! to linear-forecaster weights and a numerically validated default η.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Loss kind plus the parameters that pin its exp-concavity constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// `(y − target)²` with predictions declared in `[lo, hi]`.
    Squared { target: f64, lo: f64, hi: f64 },
    /// `−log y` if `target_bit`, else `−log(1 − y)`; predictions clamped to
    /// `[clamp, 1 − clamp]`.
    LogLoss { target_bit: bool, clamp: f64 },
}

/// A per-round loss with its exp-concavity constant η.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFunction {
    pub kind: LossKind,
    pub eta: f64,
}

impl LossFunction {
    /// Squared loss on the declared prediction range, with the default η for
    /// that range.
    pub fn squared(target: f64, lo: f64, hi: f64) -> Result<Self> {
        let kind = LossKind::Squared { target, lo, hi };
        let eta = default_eta(&kind)?;
        Ok(LossFunction { kind, eta })
    }

    /// Binary log loss with probability clamp ε (η = 1).
    pub fn log_loss(target_bit: bool, clamp: f64) -> Result<Self> {
        if !(clamp > 0.0 && clamp < 0.5) {
            return Err(Error::invalid(format!(
                "log-loss clamp must lie in (0, 0.5), got {clamp}"
            )));
        }
        let kind = LossKind::LogLoss { target_bit, clamp };
        let eta = default_eta(&kind)?;
        Ok(LossFunction { kind, eta })
    }

    /// Same loss with an explicit η override.
    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::invalid(format!("eta must be > 0, got {eta}")));
        }
        self.eta = eta;
        Ok(self)
    }

    /// Evaluate the loss at prediction `y`.
    ///
    /// The squared-loss formula extends to any finite `y`; the declared range
    /// only pins η. Log-loss clamps `y` into `[ε, 1 − ε]` first.
    pub fn eval(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::invalid(format!("non-finite prediction: {y}")));
        }
        Ok(match self.kind {
            LossKind::Squared { target, .. } => {
                let d = y - target;
                d * d
            }
            LossKind::LogLoss { target_bit, clamp } => {
                let p = y.clamp(clamp, 1.0 - clamp);
                if target_bit {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            }
        })
    }

    /// Scalar derivative ℓ′(y).
    ///
    /// For log loss the clamp makes the effective loss constant outside the
    /// clamp band, so the derivative there is 0.
    pub fn scalar_derivative(&self, y: f64) -> f64 {
        match self.kind {
            LossKind::Squared { target, .. } => 2.0 * (y - target),
            LossKind::LogLoss { target_bit, clamp } => {
                if y < clamp || y > 1.0 - clamp {
                    0.0
                } else if target_bit {
                    -1.0 / y
                } else {
                    1.0 / (1.0 - y)
                }
            }
        }
    }

    /// Gradient of `w ↦ ℓ(wᵀx)`: `ℓ′(wᵀx)·x`.
    pub fn grad_wrt_weights(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        if x.len() != w.len() {
            return Err(Error::invalid(format!(
                "dimension mismatch: x has {} entries, w has {}",
                x.len(),
                w.len()
            )));
        }
        let d = self.scalar_derivative(crate::linalg::dot(w, x));
        Ok(x.iter().map(|&xi| d * xi).collect())
    }

    /// The prediction interval over which exp-concavity is declared.
    pub fn declared_range(&self) -> (f64, f64) {
        match self.kind {
            LossKind::Squared { lo, hi, .. } => (lo, hi),
            LossKind::LogLoss { clamp, .. } => (clamp, 1.0 - clamp),
        }
    }

    /// Numeric exp-concavity check: second differences of `e^(−ηℓ)` on a
    /// 10³-point grid over the declared range must stay ≤ 1e-9.
    pub fn exp_concavity_holds(&self, eta: f64) -> bool {
        let (lo, hi) = self.declared_range();
        let m = 1000usize;
        let h = (hi - lo) / (m as f64 - 1.0);
        let g: Vec<f64> = (0..m)
            .map(|i| {
                let y = lo + h * i as f64;
                (-eta * self.eval(y).expect("grid point is finite")).exp()
            })
            .collect();
        g.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] <= 1e-9)
    }
}

/// Default exp-concavity constant for a loss kind.
///
/// Squared loss over a range of width `C` is `1/(2C²)`-exp-concave (the
/// largest η for which `e^(−ηℓ)` stays concave when predictions and targets
/// share the range); binary log loss is 1-exp-concave since `e^(−ℓ)` is the
/// identity (resp. `1 − y`), which is linear.
pub fn default_eta(kind: &LossKind) -> Result<f64> {
    match *kind {
        LossKind::Squared { lo, hi, .. } => {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::invalid(format!(
                    "squared loss needs a bounded prediction range, got [{lo}, {hi}]"
                )));
            }
            let width = hi - lo;
            Ok(1.0 / (2.0 * width * width))
        }
        LossKind::LogLoss { .. } => Ok(1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_known_values() {
        let l = LossFunction::squared(0.5, 0.0, 1.0).unwrap();
        assert_eq!(l.eval(0.5).unwrap(), 0.0);

        let l = LossFunction::squared(1.0, 0.0, 1.0).unwrap();
        assert_eq!(l.eval(0.0).unwrap(), 1.0);

        let l = LossFunction::log_loss(true, 1e-6).unwrap();
        assert!((l.eval(0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn eval_rejects_non_finite() {
        let l = LossFunction::squared(0.0, 0.0, 1.0).unwrap();
        assert!(l.eval(f64::NAN).is_err());
        assert!(l.eval(f64::INFINITY).is_err());
    }

    #[test]
    fn gradient_known_values() {
        let l = LossFunction::squared(0.0, -2.0, 2.0).unwrap();
        let g = l.grad_wrt_weights(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(g, vec![2.0, 0.0]);

        let g = l.grad_wrt_weights(&[0.0, 0.0], &[0.3, -0.7]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    /// Central finite differences of ℓ(wᵀx) in each coordinate of w.
    fn finite_difference_grad(l: &LossFunction, x: &[f64], w: &[f64], h: f64) -> Vec<f64> {
        (0..w.len())
            .map(|i| {
                let mut wp = w.to_vec();
                let mut wm = w.to_vec();
                wp[i] += h;
                wm[i] -= h;
                let fp = l.eval(crate::linalg::dot(&wp, x)).unwrap();
                let fm = l.eval(crate::linalg::dot(&wm, x)).unwrap();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = LossFunction::squared(0.3, -2.0, 2.0).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = l.grad_wrt_weights(&x, &w).unwrap();
            let fd = finite_difference_grad(&l, &x, &w, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                let scale = b.abs().max(1.0);
                assert!((a - b).abs() / scale <= 1e-5, "grad {a} vs fd {b}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_log_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let l = LossFunction::log_loss(true, 1e-6).unwrap();
        for _ in 0..100 {
            // Keep wᵀx inside the smooth band of the clamp.
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(0.2..0.4)).collect();
            let w: Vec<f64> = (0..2).map(|_| rng.random_range(0.3..1.2)).collect();
            let g = l.grad_wrt_weights(&x, &w).unwrap();
            let fd = finite_difference_grad(&l, &x, &w, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                let scale = b.abs().max(1.0);
                assert!((a - b).abs() / scale <= 1e-5, "grad {a} vs fd {b}");
            }
        }
    }

    #[test]
    fn spec_example_finite_difference_point() {
        let l = LossFunction::squared(0.3, -2.0, 2.0).unwrap();
        let x = [0.2, 0.4];
        let w = [0.5, 0.5];
        let g = l.grad_wrt_weights(&x, &w).unwrap();
        let fd = finite_difference_grad(&l, &x, &w, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn default_eta_values() {
        assert_eq!(
            default_eta(&LossKind::Squared {
                target: 0.0,
                lo: 0.0,
                hi: 1.0
            })
            .unwrap(),
            0.5
        );
        assert_eq!(
            default_eta(&LossKind::Squared {
                target: 0.0,
                lo: 0.0,
                hi: 2.0
            })
            .unwrap(),
            0.125
        );
        assert_eq!(
            default_eta(&LossKind::LogLoss {
                target_bit: true,
                clamp: 1e-3
            })
            .unwrap(),
            1.0
        );
        assert!(default_eta(&LossKind::Squared {
            target: 0.0,
            lo: 0.0,
            hi: f64::INFINITY
        })
        .is_err());
    }

    #[test]
    fn exp_concavity_passes_at_default_and_fails_when_pushed() {
        for target in [0.0, 0.25, 1.0] {
            let l = LossFunction::squared(target, 0.0, 1.0).unwrap();
            assert!(l.exp_concavity_holds(0.5));
            assert!(!l.exp_concavity_holds(4.0));
            assert!(!l.exp_concavity_holds(8.0 * 0.5));
        }
        let l = LossFunction::log_loss(true, 1e-3).unwrap();
        assert!(l.exp_concavity_holds(1.0));
        let l = LossFunction::log_loss(false, 1e-3).unwrap();
        assert!(l.exp_concavity_holds(1.0));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let l = LossFunction::squared(0.0, 0.0, 1.0).unwrap();
        assert!(l.grad_wrt_weights(&[1.0, 2.0], &[1.0]).is_err());
    }
}
