//! Smooth local costs `J_k`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// `J(w) = ½(w − c)ᵀH(w − c)` with `H` symmetric positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    hessian: DMatrix<f64>,
    center: DVector<f64>,
    lipschitz: f64,
    modulus: f64,
}

impl Quadratic {
    pub fn new(hessian: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        if !hessian.is_square() || hessian.nrows() != center.len() {
            return Err(Error::DimensionMismatch(format!(
                "hessian {}×{} with center of length {}",
                hessian.nrows(),
                hessian.ncols(),
                center.len()
            )));
        }
        let asym = linalg::max_asymmetry(&hessian);
        if asym > 1e-12 * (1.0 + hessian.amax()) {
            return Err(Error::NotSymmetric(asym));
        }
        let eig = linalg::sym_eigenvalues(&hessian);
        let modulus = eig.first().copied().unwrap_or(0.0).max(0.0);
        let lipschitz = eig.last().copied().unwrap_or(0.0);
        if eig.first().is_some_and(|&l| l < -1e-12 * (1.0 + lipschitz)) {
            return Err(Error::InvalidParameter(
                "quadratic cost hessian is indefinite".into(),
            ));
        }
        Ok(Self {
            hessian,
            center,
            lipschitz,
            modulus,
        })
    }

    /// `½ scale ‖w − c‖²`.
    pub fn isotropic(scale: f64, center: DVector<f64>) -> Result<Self> {
        let n = center.len();
        Self::new(DMatrix::identity(n, n) * scale, center)
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }
}

/// `J(w) = (1/2T) Σ_t (u_tᵀw − p_t)²`, regressors stored one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    regressors: DMatrix<f64>,
    targets: DVector<f64>,
    gram: DMatrix<f64>,
    moment: DVector<f64>,
    offset: f64,
    lipschitz: f64,
    modulus: f64,
}

impl LeastSquares {
    pub fn new(regressors: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        let t = regressors.nrows();
        if t == 0 || targets.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "{t} regressor rows with {} targets",
                targets.len()
            )));
        }
        let scale = 1.0 / t as f64;
        let gram = regressors.tr_mul(&regressors) * scale;
        let moment = regressors.tr_mul(&targets) * scale;
        let offset = 0.5 * targets.norm_squared() * scale;
        let eig = linalg::sym_eigenvalues(&gram);
        Ok(Self {
            lipschitz: eig.last().copied().unwrap_or(0.0),
            modulus: eig.first().copied().unwrap_or(0.0).max(0.0),
            regressors,
            targets,
            gram,
            moment,
            offset,
        })
    }

    pub fn regressors(&self) -> &DMatrix<f64> {
        &self.regressors
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    /// `(1/T) UᵀU`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `(1/T) Uᵀp`.
    pub fn moment(&self) -> &DVector<f64> {
        &self.moment
    }
}

/// `J(w) = (1/T) Σ_t ln(1 + exp(−x_t h_tᵀw)) + (η/2)‖w‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logistic {
    features: DMatrix<f64>,
    labels: DVector<f64>,
    l2: f64,
    lipschitz: f64,
}

impl Logistic {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>, l2: f64) -> Result<Self> {
        let t = features.nrows();
        if t == 0 || labels.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "{t} feature rows with {} labels",
                labels.len()
            )));
        }
        if labels.iter().any(|&x| x != 1.0 && x != -1.0) {
            return Err(Error::InvalidParameter("logistic labels must be ±1".into()));
        }
        if !(l2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "l2 weight must be ≥ 0, got {l2}"
            )));
        }
        let lipschitz = 0.25 * linalg::lambda_max(&features.tr_mul(&features)) / t as f64 + l2;
        Ok(Self {
            features,
            labels,
            l2,
            lipschitz,
        })
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }
}

/// `ln(1 + eᶻ)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `1 / (1 + e⁻ᶻ)` without overflow.
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// A smooth local cost.
#[derive(Debug, Clone, PartialEq)]
pub enum Cost {
    Quadratic(Quadratic),
    LeastSquares(LeastSquares),
    Logistic(Logistic),
}

impl Cost {
    pub fn dim(&self) -> usize {
        match self {
            Cost::Quadratic(q) => q.center.len(),
            Cost::LeastSquares(l) => l.gram.nrows(),
            Cost::Logistic(l) => l.features.ncols(),
        }
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        match self {
            Cost::Quadratic(q) => {
                let d = w - &q.center;
                0.5 * d.dot(&(&q.hessian * &d))
            }
            Cost::LeastSquares(l) => 0.5 * w.dot(&(&l.gram * w)) - l.moment.dot(w) + l.offset,
            Cost::Logistic(l) => {
                let margins = &l.features * w;
                let loss: f64 = margins
                    .iter()
                    .zip(l.labels.iter())
                    .map(|(m, x)| softplus(-x * m))
                    .sum();
                loss / l.labels.len() as f64 + 0.5 * l.l2 * w.norm_squared()
            }
        }
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        match self {
            Cost::Quadratic(q) => &q.hessian * (w - &q.center),
            Cost::LeastSquares(l) => &l.gram * w - &l.moment,
            Cost::Logistic(l) => {
                let margins = &l.features * w;
                let t = l.labels.len() as f64;
                let weights = DVector::from_iterator(
                    margins.len(),
                    margins
                        .iter()
                        .zip(l.labels.iter())
                        .map(|(m, x)| -x * sigmoid(-x * m) / t),
                );
                l.features.tr_mul(&weights) + w * l.l2
            }
        }
    }

    /// Lipschitz constant of the gradient.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Cost::Quadratic(q) => q.lipschitz,
            Cost::LeastSquares(l) => l.lipschitz,
            Cost::Logistic(l) => l.lipschitz,
        }
    }

    /// Strong-convexity modulus (a valid lower bound for the logistic cost).
    pub fn modulus(&self) -> f64 {
        match self {
            Cost::Quadratic(q) => q.modulus,
            Cost::LeastSquares(l) => l.modulus,
            Cost::Logistic(l) => l.l2,
        }
    }

    /// `(H, g)` with `J(w) = ½wᵀHw − gᵀw + const`, when the cost is quadratic.
    pub fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        match self {
            Cost::Quadratic(q) => Some((q.hessian.clone(), &q.hessian * &q.center)),
            Cost::LeastSquares(l) => Some((l.gram.clone(), l.moment.clone())),
            Cost::Logistic(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn least_squares_gradients() {
        let zero =
            Cost::LeastSquares(LeastSquares::new(DMatrix::zeros(4, 3), DVector::zeros(4)).unwrap());
        assert_eq!(zero.gradient(&DVector::zeros(3)), DVector::zeros(3));

        let one = Cost::LeastSquares(
            LeastSquares::new(
                DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                DVector::from_element(1, 1.0),
            )
            .unwrap(),
        );
        assert_eq!(
            one.gradient(&DVector::zeros(2)),
            DVector::from_vec(vec![-1.0, 0.0])
        );
        assert_abs_diff_eq!(one.value(&DVector::zeros(2)), 0.5);
        assert_abs_diff_eq!(one.lipschitz(), 1.0);
        assert_abs_diff_eq!(one.modulus(), 0.0);
    }

    #[test]
    fn isotropic_quadratic_constants() {
        let c =
            Cost::Quadratic(Quadratic::isotropic(1.0, DVector::from_vec(vec![1.0, -2.0])).unwrap());
        assert_eq!(c.lipschitz(), 1.0);
        assert_eq!(c.modulus(), 1.0);
        assert!(Quadratic::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            DVector::zeros(2)
        )
        .is_err());
        assert!(Quadratic::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            DVector::zeros(2)
        )
        .is_err());
    }

    #[test]
    fn logistic_is_stable_for_large_margins() {
        let l = Cost::Logistic(
            Logistic::new(
                DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
                DVector::from_vec(vec![1.0, -1.0]),
                0.0,
            )
            .unwrap(),
        );
        let big = DVector::from_element(1, 800.0);
        assert!(l.value(&big).is_finite() && l.value(&big) < 1e-300);
        assert!(l.value(&-big.clone()).is_finite());
        assert!(l.gradient(&-big).iter().all(|g| g.is_finite()));
    }

    fn logistic_instance(seed: u64) -> Cost {
        let mut s = seed;
        let mut next = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        let h = DMatrix::from_fn(12, 4, |_, _| next());
        let x = DVector::from_fn(12, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        Cost::Logistic(Logistic::new(h, x, 0.1).unwrap())
    }

    proptest! {
        #[test]
        fn logistic_gradient_matches_central_differences(seed in 0u64..1000, w in prop::collection::vec(-2.0f64..2.0, 4)) {
            let cost = logistic_instance(seed);
            let w = DVector::from_vec(w);
            let g = cost.gradient(&w);
            let h = 1e-5;
            for i in 0..4 {
                let mut up = w.clone();
                let mut dn = w.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (cost.value(&up) - cost.value(&dn)) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() < 1e-6, "coordinate {i}: {fd} vs {}", g[i]);
            }
        }

        #[test]
        fn gradients_are_lipschitz_and_cocoercive(seed in 0u64..1000,
            a in prop::collection::vec(-3.0f64..3.0, 4), b in prop::collection::vec(-3.0f64..3.0, 4)) {
            let cost = logistic_instance(seed);
            let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
            let dg = cost.gradient(&a) - cost.gradient(&b);
            let dw = &a - &b;
            let delta = cost.lipschitz();
            prop_assert!(dg.norm() <= delta * dw.norm() * (1.0 + 1e-12) + 1e-15);
            prop_assert!(dw.dot(&dg) <= delta * dw.norm_squared() * (1.0 + 1e-12) + 1e-15);
            prop_assert!(dw.dot(&dg) >= cost.modulus() * dw.norm_squared() * (1.0 - 1e-12) - 1e-15);
        }
    }
}
