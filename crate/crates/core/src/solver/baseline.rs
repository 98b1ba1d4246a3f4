//! The structure-ignoring baseline and communication accounting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{assemble_problem, ConstraintBlock, ProblemSpec};

/// Rewrites all constraints as one constraint over every agent. Agent `k`'s
/// block stacks `B_{e,k}` for each `e`, with zero rows where `k ∉ 𝓒_e`.
pub fn flatten_to_single_constraint(problem: &ProblemSpec) -> Result<ProblemSpec> {
    if !problem.network().is_connected() {
        return Err(Error::DisconnectedNetwork);
    }
    let k_count = problem.agent_count();
    let already_flat =
        problem.constraint_count() == 1 && problem.constraint(0).sub.size() == k_count;
    if already_flat || problem.constraint_count() == 0 {
        return Ok(problem.clone());
    }
    let total_rows: usize = problem.block_sizes().iter().sum();
    let mut blocks = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let q = problem.agent_dim(k);
        let mut matrix = DMatrix::zeros(total_rows, q);
        let mut rhs = DVector::zeros(total_rows);
        let mut at = 0;
        for (e, c) in problem.constraints().iter().enumerate() {
            if let Some(m) = problem.memberships(k).iter().find(|m| m.constraint == e) {
                let (b, r) = &c.blocks[m.position];
                matrix.view_mut((at, 0), (c.rows, q)).copy_from(b);
                rhs.rows_mut(at, c.rows).copy_from(r);
            }
            at += c.rows;
        }
        blocks.push(ConstraintBlock {
            constraint: 0,
            agent: k,
            matrix,
            rhs,
        });
    }
    assemble_problem(problem.network().clone(), problem.agents().to_vec(), blocks)
}

/// Scalars sent per exchange round: each agent sends `φ_k^e` (length `S_e`)
/// to each neighbor inside `𝓒_e`. Round 0 performs no exchange.
pub fn communication_cost(problem: &ProblemSpec) -> usize {
    problem
        .constraints()
        .iter()
        .map(|c| {
            (0..c.sub.size())
                .map(|p| c.sub.local_degree(p))
                .sum::<usize>()
                * c.rows
        })
        .sum()
}
