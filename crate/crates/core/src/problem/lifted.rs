//! Dense network-level coupling matrix `𝓑` and stacked right-hand side `b`.
//!
//! The solver never forms `𝓑`; it applies it block by block through
//! [`ProblemSpec::apply_coupling`]. The dense form exists for inspection,
//! spectral checks and tests.

use nalgebra::{DMatrix, DVector};

use super::spec::ProblemSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedProblem {
    /// `N × Σ_k Q_k`; block row `(e, k)` holds `B_{e,k}` in agent `k`'s columns.
    pub coupling: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl LiftedProblem {
    pub fn dual_dim(&self) -> usize {
        self.coupling.nrows()
    }
}

pub fn lift(problem: &ProblemSpec) -> LiftedProblem {
    let mut coupling = DMatrix::zeros(problem.dual_dim(), problem.primal_dim());
    for (e, c) in problem.constraints().iter().enumerate() {
        for (p, (&k, (b, _))) in c.sub.members().iter().zip(&c.blocks).enumerate() {
            coupling
                .view_mut(
                    (problem.dual_offset(e, p), problem.primal_offset(k)),
                    (c.rows, b.ncols()),
                )
                .copy_from(b);
        }
    }
    LiftedProblem {
        coupling,
        rhs: problem.rhs_stack(),
    }
}
