//! Nonsmooth local terms `R_k` with closed-form proximal maps.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Regularizer {
    Zero,
    /// `η‖u‖₁`
    L1 {
        eta: f64,
    },
    /// `(η/2)‖u‖²`
    SquaredL2 {
        eta: f64,
    },
    /// `l1‖u‖₁ + (l2/2)‖u‖²`
    ElasticNet {
        l1: f64,
        l2: f64,
    },
    /// Indicator of `lower ≤ u ≤ upper`.
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Distance from `g` to `η·∂|·|(w)`.
fn l1_distance(w: f64, g: f64, eta: f64) -> f64 {
    if w == 0.0 {
        (g.abs() - eta).max(0.0)
    } else {
        (g - eta * w.signum()).abs()
    }
}

impl Regularizer {
    pub fn check(&self, dim: usize) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must be a finite value ≥ 0, got {v}"
                )))
            }
        };
        match self {
            Regularizer::Zero => Ok(()),
            Regularizer::L1 { eta } | Regularizer::SquaredL2 { eta } => nonneg("eta", *eta),
            Regularizer::ElasticNet { l1, l2 } => nonneg("l1", *l1).and(nonneg("l2", *l2)),
            Regularizer::Box { lower, upper } => {
                if lower.len() != dim || upper.len() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "box bounds of length {}/{} for a {dim}-dimensional agent",
                        lower.len(),
                        upper.len()
                    )));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::InvalidParameter("box requires lower ≤ upper".into()));
                }
                Ok(())
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Regularizer::Zero => true,
            Regularizer::L1 { eta } | Regularizer::SquaredL2 { eta } => *eta == 0.0,
            Regularizer::ElasticNet { l1, l2 } => *l1 == 0.0 && *l2 == 0.0,
            Regularizer::Box { .. } => false,
        }
    }

    /// `R(u)`; `+∞` outside a box.
    pub fn value(&self, u: &DVector<f64>) -> f64 {
        match self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { eta } => eta * u.lp_norm(1),
            Regularizer::SquaredL2 { eta } => 0.5 * eta * u.norm_squared(),
            Regularizer::ElasticNet { l1, l2 } => l1 * u.lp_norm(1) + 0.5 * l2 * u.norm_squared(),
            Regularizer::Box { lower, upper } => {
                let inside = u
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(x, (l, h))| l <= x && x <= h);
                if inside {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `argmin_u R(u) + ‖x − u‖² / (2μ)`.
    pub fn prox(&self, mu: f64, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Regularizer::Zero => x.clone(),
            Regularizer::L1 { eta } => x.map(|v| soft_threshold(v, mu * eta)),
            Regularizer::SquaredL2 { eta } => x / (1.0 + mu * eta),
            Regularizer::ElasticNet { l1, l2 } => {
                x.map(|v| soft_threshold(v, mu * l1) / (1.0 + mu * l2))
            }
            Regularizer::Box { lower, upper } => {
                DVector::from_fn(x.len(), |i, _| x[i].clamp(lower[i], upper[i]))
            }
        }
    }

    /// Euclidean distance from `g` to the subdifferential `∂R(w)`.
    pub fn subdifferential_distance(&self, w: &DVector<f64>, g: &DVector<f64>) -> f64 {
        let per_coord =
            |f: &dyn Fn(usize) -> f64| (0..w.len()).map(|i| f(i).powi(2)).sum::<f64>().sqrt();
        match self {
            Regularizer::Zero => g.norm(),
            Regularizer::L1 { eta } => per_coord(&|i| l1_distance(w[i], g[i], *eta)),
            Regularizer::SquaredL2 { eta } => (g - w * *eta).norm(),
            Regularizer::ElasticNet { l1, l2 } => {
                per_coord(&|i| l1_distance(w[i], g[i] - l2 * w[i], *l1))
            }
            Regularizer::Box { lower, upper } => {
                if self.value(w).is_infinite() {
                    return f64::INFINITY;
                }
                per_coord(&|i| {
                    let (at_lo, at_hi) = (w[i] == lower[i], w[i] == upper[i]);
                    match (at_lo, at_hi) {
                        (true, true) => 0.0,
                        (true, false) => g[i].max(0.0),
                        (false, true) => (-g[i]).max(0.0),
                        (false, false) => g[i].abs(),
                    }
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn prox_closed_forms() {
        let x = v(&[0.5, -0.1, 3.0]);
        assert_eq!(Regularizer::Zero.prox(0.7, &x), x);

        let l1 = Regularizer::L1 { eta: 0.3 }.prox(1.0, &v(&[0.5, -0.1]));
        assert_abs_diff_eq!(l1[0], 0.2, epsilon = 1e-15);
        assert_eq!(l1[1], 0.0);

        let en = Regularizer::ElasticNet { l1: 0.1, l2: 0.1 }.prox(0.2, &v(&[1.0]));
        assert_abs_diff_eq!(en[0], 0.98 / 1.02, epsilon = 1e-15);
        assert_abs_diff_eq!(en[0], 0.9608, epsilon = 5e-5);

        let sq = Regularizer::SquaredL2 { eta: 2.0 }.prox(0.5, &v(&[4.0]));
        assert_abs_diff_eq!(sq[0], 2.0);

        let bx = Regularizer::Box {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        assert_eq!(bx.prox(1.0, &v(&[-1.0, 0.5])), v(&[0.0, 0.5]));
    }

    #[test]
    fn subdifferential_distances() {
        let l1 = Regularizer::L1 { eta: 1.0 };
        assert_eq!(l1.subdifferential_distance(&v(&[0.0]), &v(&[0.5])), 0.0);
        assert_abs_diff_eq!(l1.subdifferential_distance(&v(&[0.0]), &v(&[1.5])), 0.5);
        assert_abs_diff_eq!(l1.subdifferential_distance(&v(&[-2.0]), &v(&[0.0])), 1.0);

        let bx = Regularizer::Box {
            lower: vec![0.0],
            upper: vec![1.0],
        };
        assert_eq!(bx.subdifferential_distance(&v(&[0.0]), &v(&[-3.0])), 0.0);
        assert_eq!(bx.subdifferential_distance(&v(&[0.0]), &v(&[2.0])), 2.0);
        assert_eq!(bx.subdifferential_distance(&v(&[1.0]), &v(&[2.0])), 0.0);
        assert_eq!(bx.subdifferential_distance(&v(&[0.5]), &v(&[-0.25])), 0.25);
        assert!(bx
            .subdifferential_distance(&v(&[2.0]), &v(&[0.0]))
            .is_infinite());
    }

    #[test]
    fn check_rejects_bad_parameters() {
        assert!(Regularizer::L1 { eta: -1.0 }.check(2).is_err());
        assert!(Regularizer::Box {
            lower: vec![0.0],
            upper: vec![1.0]
        }
        .check(2)
        .is_err());
        assert!(Regularizer::Box {
            lower: vec![2.0],
            upper: vec![1.0]
        }
        .check(1)
        .is_err());
    }

    #[test]
    fn serde_uses_kind_tags() {
        let r: Regularizer =
            serde_json::from_str(r#"{"kind":"elastic-net","l1":0.1,"l2":0.2}"#).unwrap();
        assert_eq!(r, Regularizer::ElasticNet { l1: 0.1, l2: 0.2 });
        let z: Regularizer = serde_json::from_str(r#"{"kind":"zero"}"#).unwrap();
        assert!(z.is_zero());
    }
}
