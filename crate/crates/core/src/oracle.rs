//! Centralized reference solutions `(𝔀★, {v^{e★}})`.
//!
//! Both oracles work on the aggregated problem
//! `min Σ_k J_k(w_k) + R_k(w_k)  s.t.  M𝔀 = c`, where row block `e` of `M`
//! holds `B_{e,k}` in the columns of agent `k`. They never touch the
//! distributed recursion.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::Reference;
use crate::combiners::SpectralData;
use crate::error::{Error, Result};
use crate::linalg::{lambda_max, numerical_rank};
use crate::problem::{content_hash, smoothness_params, ProblemSpec, Regularizer};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    KktLinear,
    CentralizedProx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    /// `w_k★` per agent.
    pub w: Vec<Vec<f64>>,
    /// `v^{e★}` per constraint.
    pub duals: Vec<Vec<f64>>,
    /// Largest of the stationarity and feasibility residuals.
    pub achieved: f64,
    pub method: Method,
    /// False when the multipliers are not unique and the minimum-norm ones were chosen.
    pub duals_unique: bool,
    pub iterations: usize,
}

impl ReferenceSolution {
    pub fn stacked_w(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.w.iter().map(Vec::len).sum(),
            self.w.iter().flatten().copied(),
        )
    }

    pub fn dual_vectors(&self) -> Vec<DVector<f64>> {
        self.duals
            .iter()
            .map(|v| DVector::from_column_slice(v))
            .collect()
    }

    pub fn reference(&self, problem: &ProblemSpec, spectral: &SpectralData) -> Result<Reference> {
        Reference::new(
            problem,
            spectral,
            self.stacked_w(),
            &self.dual_vectors(),
            self.duals_unique,
        )
    }

    /// The same solution for the instance with every constraint stacked into
    /// one: the multipliers concatenate in constraint order.
    pub fn flattened(&self) -> ReferenceSolution {
        ReferenceSolution {
            duals: vec![self.duals.concat()],
            ..self.clone()
        }
    }

    fn check_shape(&self, problem: &ProblemSpec) -> bool {
        self.w.len() == problem.agent_count()
            && self
                .w
                .iter()
                .enumerate()
                .all(|(k, w)| w.len() == problem.agent_dim(k))
            && self.duals.len() == problem.constraint_count()
            && self
                .duals
                .iter()
                .zip(problem.constraints())
                .all(|(v, c)| v.len() == c.rows)
    }
}

/// The aggregated constraint `M𝔀 = c` and agent column offsets.
struct Aggregate {
    offsets: Vec<usize>,
    dims: Vec<usize>,
    row_offsets: Vec<usize>,
    m: DMatrix<f64>,
    c: DVector<f64>,
}

impl Aggregate {
    fn new(problem: &ProblemSpec) -> Self {
        let dims: Vec<usize> = problem.agents().iter().map(|a| a.cost.dim()).collect();
        let offsets: Vec<usize> = dims
            .iter()
            .scan(0, |acc, &d| {
                let at = *acc;
                *acc += d;
                Some(at)
            })
            .collect();
        let row_offsets: Vec<usize> = problem
            .constraints()
            .iter()
            .scan(0, |acc, c| {
                let at = *acc;
                *acc += c.rows;
                Some(at)
            })
            .collect();
        let rows: usize = problem.constraints().iter().map(|c| c.rows).sum();
        let cols: usize = dims.iter().sum();
        let mut m = DMatrix::zeros(rows, cols);
        let mut c = DVector::zeros(rows);
        for (e, con) in problem.constraints().iter().enumerate() {
            for (&k, (b, rhs)) in con.sub.members().iter().zip(&con.blocks) {
                let mut view = m.view_mut((row_offsets[e], offsets[k]), (con.rows, dims[k]));
                view += b;
                let mut cv = c.rows_mut(row_offsets[e], con.rows);
                cv += rhs;
            }
        }
        Self {
            offsets,
            dims,
            row_offsets,
            m,
            c,
        }
    }

    fn primal_dim(&self) -> usize {
        self.m.ncols()
    }

    fn parts<'a>(&'a self, w: &'a DVector<f64>) -> impl Iterator<Item = DVector<f64>> + 'a {
        self.offsets
            .iter()
            .zip(&self.dims)
            .map(move |(&o, &d)| w.rows(o, d).into_owned())
    }

    fn gradient(&self, problem: &ProblemSpec, w: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(w.len());
        for (k, part) in self.parts(w).enumerate() {
            g.rows_mut(self.offsets[k], self.dims[k])
                .copy_from(&problem.agent(k).cost.gradient(&part));
        }
        g
    }

    fn prox(&self, problem: &ProblemSpec, t: f64, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(z.len());
        for (k, part) in self.parts(z).enumerate() {
            out.rows_mut(self.offsets[k], self.dims[k])
                .copy_from(&problem.agent(k).regularizer.prox(t, &part));
        }
        out
    }

    /// `dist(g, ∂𝓡(𝔀))`.
    fn subdifferential_distance(
        &self,
        problem: &ProblemSpec,
        w: &DVector<f64>,
        g: &DVector<f64>,
    ) -> f64 {
        self.parts(w)
            .zip(self.parts(g))
            .enumerate()
            .map(|(k, (wk, gk))| {
                problem
                    .agent(k)
                    .regularizer
                    .subdifferential_distance(&wk, &gk)
                    .powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `(stationarity, feasibility)` at `(𝔀, v)`.
    fn residuals(&self, problem: &ProblemSpec, w: &DVector<f64>, v: &DVector<f64>) -> (f64, f64) {
        let g = -(self.gradient(problem, w) + self.m.tr_mul(v));
        let stationarity = self.subdifferential_distance(problem, w, &g);
        (stationarity, (&self.m * w - &self.c).norm())
    }

    /// Block-diagonal `H` and `g` with `𝓙(𝔀) = ½𝔀ᵀH𝔀 − gᵀ𝔀 + const`.
    fn quadratic_form(&self, problem: &ProblemSpec) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let n = self.primal_dim();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for (k, a) in problem.agents().iter().enumerate() {
            let (hk, gk) = a.cost.quadratic_form()?;
            h.view_mut(
                (self.offsets[k], self.offsets[k]),
                (self.dims[k], self.dims[k]),
            )
            .copy_from(&hk);
            g.rows_mut(self.offsets[k], self.dims[k]).copy_from(&gk);
        }
        Some((h, g))
    }

    fn full_row_rank(&self, m: &DMatrix<f64>) -> bool {
        m.nrows() == 0 || numerical_rank(m, 1e-10) == m.nrows()
    }

    fn solution(
        &self,
        w: &DVector<f64>,
        v: &DVector<f64>,
        achieved: f64,
        method: Method,
        unique: bool,
        iterations: usize,
    ) -> ReferenceSolution {
        ReferenceSolution {
            w: self.parts(w).map(|p| p.iter().copied().collect()).collect(),
            duals: self
                .row_offsets
                .iter()
                .enumerate()
                .map(|(e, &o)| {
                    let rows = self
                        .row_offsets
                        .get(e + 1)
                        .copied()
                        .unwrap_or(self.m.nrows())
                        - o;
                    v.rows(o, rows).iter().copied().collect()
                })
                .collect(),
            achieved,
            method,
            duals_unique: unique,
            iterations,
        }
    }
}

/// Solves `[H Aᵀ; A 0][x; λ] = [r; s]` by SVD, returning the minimum-norm
/// solution and the relative residual.
fn saddle_solve(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    r: &DVector<f64>,
    s: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, f64) {
    let (n, m) = (h.nrows(), a.nrows());
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(h);
    k.view_mut((n, 0), (m, n)).copy_from(a);
    k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(r);
    rhs.rows_mut(n, m).copy_from(s);
    if n + m == 0 {
        return (DVector::zeros(0), DVector::zeros(0), 0.0);
    }
    let svd = k.clone().svd(true, true);
    let eps = 1e-10 * svd.singular_values.max();
    let z = svd.solve(&rhs, eps).expect("U and V were computed");
    let residual = (&k * &z - &rhs).norm() / (1.0 + rhs.norm());
    (
        z.rows(0, n).into_owned(),
        z.rows(n, m).into_owned(),
        residual,
    )
}

/// Exact solve of the saddle-point linear system for quadratic costs without
/// regularizers.
pub fn kkt_solve_quadratic(problem: &ProblemSpec) -> Result<ReferenceSolution> {
    let agg = Aggregate::new(problem);
    let (h, g) = agg.quadratic_form(problem).ok_or_else(|| {
        Error::OracleNotApplicable("kkt-linear", "a cost is not quadratic".into())
    })?;
    if !problem.all_regularizers_zero() {
        return Err(Error::OracleNotApplicable(
            "kkt-linear",
            "a regularizer is nonzero".into(),
        ));
    }
    let (w, v, residual) = saddle_solve(&h, &agg.m, &g, &agg.c);
    if residual > 1e-10 {
        return Err(Error::NoConvergence {
            iterations: 0,
            achieved: residual,
            target: 1e-10,
        });
    }
    let (st, fe) = agg.residuals(problem, &w, &v);
    let unique = agg.full_row_rank(&agg.m);
    Ok(agg.solution(&w, &v, st.max(fe), Method::KktLinear, unique, 0))
}

/// Coordinate status of a candidate solution under its regularizer.
enum Coord {
    /// Free coordinate with linear term `lin` and extra curvature `diag`.
    Free {
        lin: f64,
        diag: f64,
    },
    Fixed(f64),
}

fn classify(reg: &Regularizer, i: usize, x: f64, thr: f64) -> Coord {
    let sparse = |eta: f64, diag: f64| {
        if x.abs() <= thr {
            Coord::Fixed(0.0)
        } else {
            Coord::Free {
                lin: eta * x.signum(),
                diag,
            }
        }
    };
    match reg {
        Regularizer::Zero => Coord::Free {
            lin: 0.0,
            diag: 0.0,
        },
        Regularizer::SquaredL2 { eta } => Coord::Free {
            lin: 0.0,
            diag: *eta,
        },
        Regularizer::L1 { eta } => sparse(*eta, 0.0),
        Regularizer::ElasticNet { l1, l2 } => sparse(*l1, *l2),
        Regularizer::Box { lower, upper } => {
            if x <= lower[i] + thr {
                Coord::Fixed(lower[i])
            } else if x >= upper[i] - thr {
                Coord::Fixed(upper[i])
            } else {
                Coord::Free {
                    lin: 0.0,
                    diag: 0.0,
                }
            }
        }
    }
}

/// Refines an approximate solution of a quadratic problem by fixing the
/// coordinates the regularizers hold at a kink and solving the remaining
/// equality-constrained quadratic program exactly. Returns the refined
/// `(𝔀, v, unique)` only if it satisfies the optimality conditions to `tol`.
fn polish(
    problem: &ProblemSpec,
    agg: &Aggregate,
    w: &DVector<f64>,
    tol: f64,
) -> Option<(DVector<f64>, DVector<f64>, bool)> {
    let (h, g) = agg.quadratic_form(problem)?;
    let thr = 1e-8 * (1.0 + w.amax());
    let n = agg.primal_dim();
    let mut free = Vec::new();
    let mut fixed = DVector::zeros(n);
    let mut lin = DVector::zeros(n);
    let mut diag = DVector::zeros(n);
    for (k, a) in problem.agents().iter().enumerate() {
        for i in 0..agg.dims[k] {
            let j = agg.offsets[k] + i;
            match classify(&a.regularizer, i, w[j], thr) {
                Coord::Free { lin: l, diag: d } => {
                    free.push(j);
                    lin[j] = l;
                    diag[j] = d;
                }
                Coord::Fixed(x) => fixed[j] = x,
            }
        }
    }
    let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| {
        h[(free[a], free[b])] + if a == b { diag[free[a]] } else { 0.0 }
    });
    let hx = &h * &fixed;
    let rf = DVector::from_fn(free.len(), |a, _| g[free[a]] - lin[free[a]] - hx[free[a]]);
    let mf = DMatrix::from_fn(agg.m.nrows(), free.len(), |r, a| agg.m[(r, free[a])]);
    let sf = &agg.c - &agg.m * &fixed;
    let (wf, v, residual) = saddle_solve(&hf, &mf, &rf, &sf);
    if residual > 1e-10 {
        return None;
    }
    let mut out = fixed;
    for (a, &j) in free.iter().enumerate() {
        out[j] = wf[a];
    }
    let (st, fe) = agg.residuals(problem, &out, &v);
    (st.max(fe) <= tol).then(|| (out, v, agg.full_row_rank(&mf)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxOptions {
    pub tol: f64,
    /// Cap on inner proximal-gradient iterations, summed over outer steps.
    pub max_iterations: usize,
    /// Try the exact active-set refinement on quadratic instances.
    pub polish: bool,
}

impl Default for ProxOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            polish: true,
        }
    }
}

/// Inexact augmented Lagrangian method with an accelerated proximal-gradient
/// inner solver, run until the optimality residuals fall below `tol`. On
/// quadratic instances each outer step also tries [`polish`], which succeeds
/// once the active set is identified and is immune to the slow dual
/// convergence of nearly rank-deficient constraints.
pub fn centralized_prox_solve(
    problem: &ProblemSpec,
    opts: &ProxOptions,
) -> Result<ReferenceSolution> {
    let tol = opts.tol;
    let sm = smoothness_params(problem);
    if !sm.strongly_convex() {
        return Err(Error::NotStronglyConvex);
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "oracle tolerance must be positive, got {tol}"
        )));
    }
    let agg = Aggregate::new(problem);
    let n = agg.primal_dim();
    let m_norm2 = if agg.m.nrows() == 0 {
        0.0
    } else if agg.m.nrows() <= n {
        lambda_max(&(&agg.m * agg.m.transpose()))
    } else {
        lambda_max(&agg.m.tr_mul(&agg.m))
    };
    let rho_max = if m_norm2 > 0.0 {
        1e6 * sm.delta / m_norm2
    } else {
        0.0
    };
    let mut rho = if m_norm2 > 0.0 {
        sm.delta / m_norm2
    } else {
        0.0
    };
    let try_polish = opts.polish && problem.all_costs_quadratic();

    let mut w = agg.prox(problem, 1.0, &DVector::zeros(n));
    let mut v = DVector::zeros(agg.m.nrows());
    let mut iterations = 0;
    let mut prev_feas = f64::INFINITY;
    let mut achieved = f64::INFINITY;

    while iterations < opts.max_iterations {
        // Inner: minimize 𝓙 + 𝓡 + vᵀ(M𝔀 − c) + ρ/2‖M𝔀 − c‖² over 𝔀.
        let step = 1.0 / (sm.delta + rho * m_norm2);
        let smooth_grad = |x: &DVector<f64>| {
            agg.gradient(problem, x) + agg.m.tr_mul(&(&v + (&agg.m * x - &agg.c) * rho))
        };
        let inner_tol = 0.1 * tol;
        let mut z = w.clone();
        let mut theta = 1.0_f64;
        loop {
            iterations += 1;
            let gz = smooth_grad(&z);
            let next = agg.prox(problem, step, &(&z - &gz * step));
            // (z − t∇f(z) − next)/t ∈ ∂𝓡(next), so this is the subproblem's stationarity residual.
            let inner = (smooth_grad(&next) - &gz + (&z - &next) / step).norm();
            let restart = (&z - &next).dot(&(&next - &w)) > 0.0;
            let theta_next = if restart {
                1.0
            } else {
                0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt())
            };
            z = if restart {
                next.clone()
            } else {
                &next + (&next - &w) * ((theta - 1.0) / theta_next)
            };
            theta = theta_next;
            w = next;
            if inner <= inner_tol || iterations >= opts.max_iterations {
                break;
            }
        }
        v += (&agg.m * &w - &agg.c) * rho;
        if try_polish {
            if let Some((pw, pv, unique)) = polish(problem, &agg, &w, tol) {
                let (st, fe) = agg.residuals(problem, &pw, &pv);
                return Ok(agg.solution(
                    &pw,
                    &pv,
                    st.max(fe),
                    Method::CentralizedProx,
                    unique,
                    iterations,
                ));
            }
        }
        let (st, fe) = agg.residuals(problem, &w, &v);
        achieved = st.max(fe);
        if achieved <= tol {
            break;
        }
        if fe > 0.25 * prev_feas {
            rho = (rho * 4.0).min(rho_max);
        }
        prev_feas = fe;
    }
    if achieved > tol {
        return Err(Error::NoConvergence {
            iterations,
            achieved,
            target: tol,
        });
    }
    let unique = agg.full_row_rank(&agg.m);
    Ok(agg.solution(
        &w,
        &v,
        achieved,
        Method::CentralizedProx,
        unique,
        iterations,
    ))
}

/// The exact linear solve when it applies, otherwise the centralized iteration.
pub fn solve_reference(problem: &ProblemSpec, tol: f64) -> Result<ReferenceSolution> {
    if problem.all_regularizers_zero() && problem.all_costs_quadratic() {
        kkt_solve_quadratic(problem)
    } else {
        centralized_prox_solve(
            problem,
            &ProxOptions {
                tol,
                ..Default::default()
            },
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    hash: String,
    tol: f64,
    solution: ReferenceSolution,
}

/// Reference solutions stored as `<dir>/<content hash>.json`.
#[derive(Debug, Clone)]
pub struct ReferenceCache {
    dir: PathBuf,
}

impl ReferenceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    /// A cached solution solved to at least `tol`, if present and readable.
    pub fn load(&self, problem: &ProblemSpec, tol: f64) -> Option<ReferenceSolution> {
        let hash = content_hash(problem);
        let text = fs::read_to_string(self.path(&hash)).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        (entry.hash == hash && entry.tol <= tol && entry.solution.check_shape(problem))
            .then_some(entry.solution)
    }

    pub fn store(
        &self,
        problem: &ProblemSpec,
        tol: f64,
        solution: &ReferenceSolution,
    ) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let hash = content_hash(problem);
        let entry = CacheEntry {
            hash: hash.clone(),
            tol,
            solution: solution.clone(),
        };
        fs::write(self.path(&hash), serde_json::to_string_pretty(&entry)?)?;
        Ok(())
    }

    /// Returns the solution and whether it came from the cache.
    pub fn get_or_solve(
        &self,
        problem: &ProblemSpec,
        tol: f64,
    ) -> Result<(ReferenceSolution, bool)> {
        if let Some(s) = self.load(problem, tol) {
            return Ok((s, true));
        }
        let s = solve_reference(problem, tol)?;
        self.store(problem, tol, &s)?;
        Ok((s, false))
    }
}
