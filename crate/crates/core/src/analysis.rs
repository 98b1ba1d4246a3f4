//! Numerical convergence certificates: optimality residuals, the Lyapunov
//! function, the per-round primal and dual error relations, and the linear
//! rate constants.

use nalgebra::DVector;
use serde::Serialize;

use crate::combiners::SpectralData;
use crate::error::{Error, Result};
use crate::problem::{smoothness_params, ProblemSpec};
use crate::solver::{Snapshot, StepSizes};

/// Exclusive upper bounds on the step sizes that guarantee convergence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLimits {
    /// `1 / (2δ − ν)`
    pub mu_w_max: f64,
    /// `ν / λ_max(𝓑ᵀ𝓑)`; infinite when `𝓑 = 0`.
    pub mu_v_max: f64,
}

impl StepLimits {
    pub fn admits(&self, steps: StepSizes) -> bool {
        steps.mu_w < self.mu_w_max && steps.mu_v < self.mu_v_max
    }

    /// `fraction` of each limit.
    pub fn scaled(&self, fraction: f64) -> Result<StepSizes> {
        if !self.mu_v_max.is_finite() {
            return Err(Error::InvalidParameter(
                "the dual step limit is unbounded; choose μ_v explicitly".into(),
            ));
        }
        StepSizes::new(fraction * self.mu_w_max, fraction * self.mu_v_max)
    }

    /// Human-readable account of which limits `steps` violates.
    pub fn describe(&self, steps: StepSizes) -> String {
        let mark = |ok: bool| if ok { "within" } else { "VIOLATES" };
        format!(
            "μ_w = {:.6} {} the primal limit 1/(2δ−ν) = {:.6}; μ_v = {:.6} {} the dual limit ν/λ_max(𝓑ᵀ𝓑) = {:.6}",
            steps.mu_w,
            mark(steps.mu_w < self.mu_w_max),
            self.mu_w_max,
            steps.mu_v,
            mark(steps.mu_v < self.mu_v_max),
            self.mu_v_max
        )
    }
}

pub fn step_size_limits(problem: &ProblemSpec) -> Result<StepLimits> {
    let s = smoothness_params(problem);
    if !s.strongly_convex() {
        return Err(Error::NotStronglyConvex);
    }
    let lmax = problem.coupling_lambda_max();
    Ok(StepLimits {
        mu_w_max: 1.0 / (2.0 * s.delta - s.nu),
        mu_v_max: if lmax > 0.0 {
            s.nu / lmax
        } else {
            f64::INFINITY
        },
    })
}

/// Scalars the rate constants depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateInputs {
    pub mu_w: f64,
    pub mu_v: f64,
    pub nu: f64,
    pub delta: f64,
    /// `λ_min(𝓑𝓑ᵀ)`
    pub lambda_min_bbt: f64,
    /// `1 − λ_r`
    pub one_minus_lambda_r: f64,
}

/// Which hypotheses of the linear-rate bound hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RateValidity {
    pub smooth: bool,
    pub full_row_rank: bool,
    pub strongly_convex: bool,
    pub steps_within_limits: bool,
    pub gamma1_in_unit_interval: bool,
    pub gamma2_in_unit_interval: bool,
}

impl RateValidity {
    pub fn all(&self) -> bool {
        self.smooth
            && self.full_row_rank
            && self.strongly_convex
            && self.steps_within_limits
            && self.gamma1_in_unit_interval
            && self.gamma2_in_unit_interval
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let checks = [
            (self.smooth, "a regularizer is nonzero"),
            (self.full_row_rank, "some blkcol{B_ek} lacks full row rank"),
            (self.strongly_convex, "the cost is not strongly convex"),
            (
                self.steps_within_limits,
                "step sizes exceed the convergence limits",
            ),
            (self.gamma1_in_unit_interval, "γ₁ is outside (0, 1)"),
            (self.gamma2_in_unit_interval, "γ₂ is outside (0, 1)"),
        ];
        for (ok, why) in checks {
            if !ok {
                out.push(why);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateBound {
    pub inputs: RateInputs,
    pub alpha: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma: f64,
    pub validity: RateValidity,
}

/// `(α, γ₁, γ₂, γ)` from the raw inputs.
pub fn rate_constants(i: &RateInputs) -> (f64, f64, f64, f64) {
    let alpha = 1.0 - i.mu_w * (2.0 * i.delta - i.nu);
    let gamma1 = 1.0 - (i.mu_w * i.nu - alpha * i.mu_w * i.mu_w * i.delta * i.delta);
    let gamma2 = 1.0 - 0.5 * alpha * i.mu_w * i.mu_v * i.lambda_min_bbt;
    let gamma = gamma1.max(gamma2).max(i.one_minus_lambda_r);
    (alpha, gamma1, gamma2, gamma)
}

pub fn rate_bound(problem: &ProblemSpec, spectral: &SpectralData, steps: StepSizes) -> RateBound {
    let s = smoothness_params(problem);
    let inputs = RateInputs {
        mu_w: steps.mu_w,
        mu_v: steps.mu_v,
        nu: s.nu,
        delta: s.delta,
        lambda_min_bbt: problem.coupling_lambda_min(),
        one_minus_lambda_r: spectral.one_minus_lambda_r(),
    };
    let (alpha, gamma1, gamma2, gamma) = rate_constants(&inputs);
    let in_unit = |g: f64| g > 0.0 && g < 1.0;
    let validity = RateValidity {
        smooth: problem.all_regularizers_zero(),
        full_row_rank: problem.coupling_full_row_rank(),
        strongly_convex: s.strongly_convex(),
        steps_within_limits: step_size_limits(problem).is_ok_and(|l| l.admits(steps)),
        gamma1_in_unit_interval: in_unit(gamma1),
        gamma2_in_unit_interval: in_unit(gamma2),
    };
    RateBound {
        inputs,
        alpha,
        gamma1,
        gamma2,
        gamma,
        validity,
    }
}

/// A saddle point `(𝔀★, 𝓎★, 𝔁★)` expressed in the solver's stacked layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub w: DVector<f64>,
    pub y: DVector<f64>,
    pub x: DVector<f64>,
    /// Whether the multipliers are unique; dual-error certificates need it.
    pub duals_unique: bool,
}

impl Reference {
    /// `𝓎★ = col{1 ⊗ v^{e★}}` and `𝔁★ = −Σ⁻¹U₁ᵀ(𝓑𝔀★ − b)`.
    pub fn new(
        problem: &ProblemSpec,
        spectral: &SpectralData,
        w: DVector<f64>,
        duals: &[DVector<f64>],
        duals_unique: bool,
    ) -> Result<Self> {
        if w.len() != problem.primal_dim() || duals.len() != problem.constraint_count() {
            return Err(Error::DimensionMismatch(
                "reference does not match the problem".into(),
            ));
        }
        let mut y = DVector::zeros(problem.dual_dim());
        for (e, (c, v)) in problem.constraints().iter().zip(duals).enumerate() {
            if v.len() != c.rows {
                return Err(Error::DimensionMismatch(format!(
                    "multiplier of constraint {e} has length {}, expected {}",
                    v.len(),
                    c.rows
                )));
            }
            for p in 0..c.sub.size() {
                y.rows_mut(problem.dual_offset(e, p), c.rows).copy_from(v);
            }
        }
        let gap = problem.apply_coupling(&w) - problem.rhs_stack();
        let mut x = -spectral.project(&gap);
        for (xi, s) in x.iter_mut().zip(spectral.sigma().iter()) {
            *xi /= s;
        }
        Ok(Self {
            w,
            y,
            x,
            duals_unique,
        })
    }
}

/// Residuals of the saddle-point conditions at `(𝔀, 𝓎)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktResiduals {
    /// `dist(−∇𝓙(𝔀) − 𝓑ᵀ𝓎, ∂𝓡(𝔀))`
    pub stationarity: f64,
    /// `‖U₁ᵀ𝓎‖`
    pub consensus: f64,
    /// `‖Σ_{k∈𝓒_e}(B_{e,k}w_k − b_{e,k})‖` per constraint.
    pub feasibility: Vec<f64>,
}

impl KktResiduals {
    pub fn max_feasibility(&self) -> f64 {
        self.feasibility.iter().copied().fold(0.0, f64::max)
    }

    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.consensus)
            .max(self.max_feasibility())
    }
}

pub fn kkt_residuals(
    problem: &ProblemSpec,
    spectral: &SpectralData,
    w: &DVector<f64>,
    y: &DVector<f64>,
) -> KktResiduals {
    let g = -(problem.gradient(w) + problem.apply_coupling_transpose(y));
    KktResiduals {
        stationarity: problem.subdifferential_distance(w, &g),
        consensus: spectral.consensus_residual(y),
        feasibility: problem
            .constraint_residuals(w)
            .iter()
            .map(|r| r.norm())
            .collect(),
    }
}

fn weighted_sq(v: &DVector<f64>, weights: &DVector<f64>) -> f64 {
    v.iter().zip(weights.iter()).map(|(a, w)| w * a * a).sum()
}

/// `‖𝔀̃‖² + μ_w(‖𝓎̃‖²/μ_v + ‖𝔁̃‖²_D)` with `D = μ_v(Σ − Σ²)`.
pub fn lyapunov(s: &Snapshot, r: &Reference, steps: StepSizes, spectral: &SpectralData) -> f64 {
    let d = spectral.dual_weight(steps.mu_v);
    (&r.w - &s.w).norm_squared()
        + steps.mu_w * ((&r.y - &s.y).norm_squared() / steps.mu_v + weighted_sq(&(&r.x - &s.x), &d))
}

/// `‖𝔀̃‖² + (μ_w/μ_v)‖𝓎̃‖² + μ_wμ_v‖𝔁̃‖²_Σ`.
pub fn weighted_error(
    s: &Snapshot,
    r: &Reference,
    steps: StepSizes,
    spectral: &SpectralData,
) -> f64 {
    (&r.w - &s.w).norm_squared()
        + steps.mu_w / steps.mu_v * (&r.y - &s.y).norm_squared()
        + steps.mu_w * steps.mu_v * weighted_sq(&(&r.x - &s.x), spectral.sigma())
}

/// Both sides of the primal error inequality and the dual error identity
/// between two consecutive rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepCertificate {
    /// Right side minus left side of the primal inequality; `≥ 0` when it holds.
    pub primal_slack: f64,
    /// Left side minus right side of the dual identity.
    pub dual_defect: f64,
    /// `|dual_defect|` over `1 +` the sum of magnitudes of every term in the identity.
    pub dual_relative_defect: f64,
}

pub fn verify_step_certificate(
    prev: &Snapshot,
    cur: &Snapshot,
    r: &Reference,
    problem: &ProblemSpec,
    steps: StepSizes,
    spectral: &SpectralData,
) -> StepCertificate {
    let StepSizes { mu_w, mu_v } = steps;
    let sm = smoothness_params(problem);
    let alpha = 1.0 - mu_w * (2.0 * sm.delta - sm.nu);

    let w_err_prev = (&r.w - &prev.w).norm_squared();
    let w_err = (&r.w - &cur.w).norm_squared();
    let step = (&cur.w - &prev.w).norm_squared();
    let cross = (&prev.y - &r.y).dot(&problem.apply_coupling(&(&cur.w - &r.w)));
    let primal_lhs = w_err - w_err_prev;
    let primal_rhs = -alpha * step - mu_w * sm.nu * (w_err_prev + w_err) - 2.0 * mu_w * cross;

    let d = spectral.dual_weight(mu_v);
    let sigma = spectral.sigma();
    let terms_lhs = [
        (&r.y - &cur.y).norm_squared() / mu_v,
        weighted_sq(&(&r.x - &cur.x), &d),
        -(&r.y - &prev.y).norm_squared() / mu_v,
        -weighted_sq(&(&r.x - &prev.x), &d),
    ];
    let sigma_x_err = (&r.x - &cur.x).component_mul(sigma);
    let terms_rhs = [
        -weighted_sq(&(&cur.x - &prev.x), &d),
        -mu_v * sigma_x_err.norm_squared(),
        mu_v * problem.apply_coupling(&(&r.w - &cur.w)).norm_squared(),
        2.0 * cross,
    ];
    let defect = terms_lhs.iter().sum::<f64>() - terms_rhs.iter().sum::<f64>();
    let scale: f64 = 1.0
        + terms_lhs
            .iter()
            .chain(&terms_rhs)
            .map(|t| t.abs())
            .sum::<f64>();
    StepCertificate {
        primal_slack: primal_rhs - primal_lhs,
        dual_defect: defect,
        dual_relative_defect: defect.abs() / scale,
    }
}

/// Result of checking the geometric bound along a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCheck {
    pub checked: usize,
    pub violations: usize,
    /// Largest `error_i / (γ^i C₀ + floor)`.
    pub worst_ratio: f64,
    pub c0: f64,
    /// `exp` of the least-squares slope of `ln error_i`, over rounds clear of the floor.
    pub fitted_rate: Option<f64>,
    pub skipped: Option<String>,
}

/// Rounding floor for the weighted error: squared errors below this are
/// indistinguishable from zero at double precision.
pub fn rate_floor(c0: f64) -> f64 {
    1e-24 * (1.0 + c0)
}

/// Checks `error_i ≤ γ^i C₀` for every snapshot, where `C₀` is the weighted
/// error at round 0. Snapshots must start at round 0.
pub fn verify_linear_rate(
    snapshots: &[Snapshot],
    r: &Reference,
    rate: &RateBound,
    steps: StepSizes,
    spectral: &SpectralData,
) -> RateCheck {
    let skip = |why: String| RateCheck {
        checked: 0,
        violations: 0,
        worst_ratio: 0.0,
        c0: 0.0,
        fitted_rate: None,
        skipped: Some(why),
    };
    if !rate.validity.all() {
        return skip(rate.validity.failures().join("; "));
    }
    if !r.duals_unique {
        return skip("multipliers are not unique".into());
    }
    match snapshots.first() {
        Some(s) if s.round == 0 => {}
        _ => return skip("the snapshots do not start at round 0".into()),
    }
    let errors: Vec<f64> = snapshots
        .iter()
        .map(|s| weighted_error(s, r, steps, spectral))
        .collect();
    let c0 = errors[0];
    let floor = rate_floor(c0);
    let mut violations = 0;
    let mut worst = 0.0_f64;
    for (s, &e) in snapshots.iter().zip(&errors) {
        let bound = rate.gamma.powi(s.round as i32) * c0 + floor;
        worst = worst.max(e / bound);
        if e > bound {
            violations += 1;
        }
    }
    let usable: Vec<(f64, f64)> = snapshots
        .iter()
        .zip(&errors)
        .filter(|(_, &e)| e > 1e3 * floor)
        .map(|(s, &e)| (s.round as f64, e.ln()))
        .collect();
    let fitted_rate = (usable.len() >= 2).then(|| {
        let n = usable.len() as f64;
        let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
        let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
        (sxy / sxx).exp()
    });
    RateCheck {
        checked: snapshots.len(),
        violations,
        worst_ratio: worst,
        c0,
        fitted_rate,
        skipped: None,
    }
}

/// Reference blocks no larger than this, relative to `max(1, ‖𝔀★‖)`, are treated as zero.
pub const VANISHING_BLOCK: f64 = 1e-9;

/// Mean squared per-agent error, relative to `‖w_k★‖²` when every reference
/// block is nonzero. The flag reports a fallback to the absolute form.
pub fn relative_error(
    problem: &ProblemSpec,
    w: &DVector<f64>,
    reference: &DVector<f64>,
) -> (f64, bool) {
    let ws = problem.split_primal(w);
    let rs = problem.split_primal(reference);
    // Blocks at the oracle's rounding level count as zero.
    let floor = VANISHING_BLOCK * reference.norm().max(1.0);
    let absolute = rs.iter().any(|r| r.norm() <= floor);
    let k = ws.len().max(1) as f64;
    let total: f64 = ws
        .iter()
        .zip(&rs)
        .map(|(a, b)| {
            let d = (a - b).norm_squared();
            if absolute {
                d
            } else {
                d / b.norm_squared()
            }
        })
        .sum();
    (total / k, absolute)
}

/// Tolerances the certificates are checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// `V_i ≤ V_{i−1} + lyapunov_relative·(1 + V_{i−1})`.
    pub lyapunov_relative: f64,
    /// Floor on the primal inequality slack.
    pub primal_slack_floor: f64,
    /// Bound on the relative defect of the dual identity.
    pub dual_relative_defect: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    lyapunov_relative: 1e-12,
    primal_slack_floor: -1e-9,
    dual_relative_defect: 1e-9,
};

/// Pass/fail counts of the per-round certificates along a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateSummary {
    pub tolerances: Tolerances,
    /// Consecutive pairs checked.
    pub pairs: usize,
    pub lyapunov_increases: usize,
    /// Largest `(V_i − V_{i−1}) / (1 + V_{i−1})`.
    pub worst_lyapunov_change: Option<f64>,
    pub primal_inequality_failures: usize,
    pub worst_primal_slack: Option<f64>,
    pub dual_identity_failures: usize,
    pub worst_dual_relative_defect: Option<f64>,
    /// Present when the rate bound applies.
    pub rate: Option<RateCheck>,
    /// Why the rate bound was not checked.
    pub rate_skipped: Option<String>,
}

impl CertificateSummary {
    pub fn all_passed(&self) -> bool {
        self.lyapunov_increases == 0
            && self.primal_inequality_failures == 0
            && self.dual_identity_failures == 0
            && self.rate.as_ref().is_none_or(|r| r.violations == 0)
    }
}

/// Streams consecutive snapshots through the Lyapunov, primal/dual and
/// linear-rate checks without storing the run.
pub struct CertificateTracker<'a> {
    problem: &'a ProblemSpec,
    spectral: &'a SpectralData,
    reference: &'a Reference,
    steps: StepSizes,
    rate: RateBound,
    prev: Option<(Snapshot, f64)>,
    summary: CertificateSummary,
    c0: Option<f64>,
    rate_worst: f64,
    rate_violations: usize,
    rate_checked: usize,
    fit: [f64; 5],
}

impl<'a> CertificateTracker<'a> {
    /// Returns `None` when the multipliers are not unique: the dual errors
    /// are then undefined.
    pub fn new(
        problem: &'a ProblemSpec,
        spectral: &'a SpectralData,
        reference: &'a Reference,
        steps: StepSizes,
    ) -> Option<Self> {
        if !reference.duals_unique {
            return None;
        }
        let rate = rate_bound(problem, spectral, steps);
        let rate_skipped = (!rate.validity.all()).then(|| rate.validity.failures().join("; "));
        Some(Self {
            problem,
            spectral,
            reference,
            steps,
            rate,
            prev: None,
            summary: CertificateSummary {
                tolerances: TOLERANCES,
                pairs: 0,
                lyapunov_increases: 0,
                worst_lyapunov_change: None,
                primal_inequality_failures: 0,
                worst_primal_slack: None,
                dual_identity_failures: 0,
                worst_dual_relative_defect: None,
                rate: None,
                rate_skipped,
            },
            c0: None,
            rate_worst: 0.0,
            rate_violations: 0,
            rate_checked: 0,
            fit: [0.0; 5],
        })
    }

    pub fn observe(&mut self, s: &Snapshot) {
        let v = lyapunov(s, self.reference, self.steps, self.spectral);
        if let Some((prev, v_prev)) = &self.prev {
            let sm = &mut self.summary;
            sm.pairs += 1;
            let change = (v - v_prev) / (1.0 + v_prev);
            sm.worst_lyapunov_change =
                Some(sm.worst_lyapunov_change.map_or(change, |w| w.max(change)));
            if change > TOLERANCES.lyapunov_relative {
                sm.lyapunov_increases += 1;
            }
            let c = verify_step_certificate(
                prev,
                s,
                self.reference,
                self.problem,
                self.steps,
                self.spectral,
            );
            sm.worst_primal_slack = Some(
                sm.worst_primal_slack
                    .map_or(c.primal_slack, |w| w.min(c.primal_slack)),
            );
            if c.primal_slack < TOLERANCES.primal_slack_floor {
                sm.primal_inequality_failures += 1;
            }
            let d = c.dual_relative_defect;
            sm.worst_dual_relative_defect =
                Some(sm.worst_dual_relative_defect.map_or(d, |w| w.max(d)));
            if d > TOLERANCES.dual_relative_defect {
                sm.dual_identity_failures += 1;
            }
        }
        if self.summary.rate_skipped.is_none() {
            let e = weighted_error(s, self.reference, self.steps, self.spectral);
            let c0 = *self.c0.get_or_insert(e);
            let floor = rate_floor(c0);
            let bound = self.rate.gamma.powi(s.round as i32) * c0 + floor;
            self.rate_checked += 1;
            self.rate_worst = self.rate_worst.max(e / bound);
            if e > bound {
                self.rate_violations += 1;
            }
            if e > 1e3 * floor {
                let (x, y) = (s.round as f64, e.ln());
                for (acc, add) in self.fit.iter_mut().zip([1.0, x, y, x * y, x * x]) {
                    *acc += add;
                }
            }
        }
        self.prev = Some((s.clone(), v));
    }

    pub fn finish(mut self) -> CertificateSummary {
        if self.summary.rate_skipped.is_none() {
            let [n, sx, sy, sxy, sxx] = self.fit;
            let denom = n * sxx - sx * sx;
            self.summary.rate = Some(RateCheck {
                checked: self.rate_checked,
                violations: self.rate_violations,
                worst_ratio: self.rate_worst,
                c0: self.c0.unwrap_or(0.0),
                fitted_rate: (n >= 2.0 && denom > 0.0).then(|| ((n * sxy - sx * sy) / denom).exp()),
                skipped: None,
            });
        }
        self.summary
    }
}
