//! Assembled problem instances.

use nalgebra::{DMatrix, DVector};

use super::cost::Cost;
use super::regularizer::Regularizer;
use crate::error::{Error, Result};
use crate::linalg;
use crate::topology::{induced_subnetwork, Network, SubNetwork};

/// The private data of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentProblem {
    pub cost: Cost,
    pub regularizer: Regularizer,
}

/// Agent `agent`'s share `B_{e,k} w_k − b_{e,k}` of constraint `constraint`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    pub constraint: usize,
    pub agent: usize,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// One coupling constraint `Σ_{k∈𝓒_e} (B_{e,k} w_k − b_{e,k}) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub sub: SubNetwork,
    pub rows: usize,
    /// `(B_{e,k}, b_{e,k})` for each member, in member order.
    pub blocks: Vec<(DMatrix<f64>, DVector<f64>)>,
}

/// Membership of an agent in a constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Membership {
    pub constraint: usize,
    /// Position of the agent inside the constraint's member list.
    pub position: usize,
}

/// A validated instance: network, per-agent data and coupling constraints,
/// plus the index maps 𝓒_e and 𝓔_k.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    network: Network,
    agents: Vec<AgentProblem>,
    constraints: Vec<Constraint>,
    memberships: Vec<Vec<Membership>>,
    primal_offsets: Vec<usize>,
    dual_offsets: Vec<usize>,
}

/// Smoothness constants of the aggregate cost.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Smoothness {
    /// Smallest strong-convexity modulus over agents.
    pub nu: f64,
    /// Largest gradient Lipschitz constant over agents.
    pub delta: f64,
}

impl Smoothness {
    pub fn strongly_convex(&self) -> bool {
        self.nu > 0.0
    }

    /// Whether `δ > ν` holds strictly.
    pub fn strict(&self) -> bool {
        self.delta > self.nu
    }
}

/// Validates and indexes an instance. Constraint ids run `0..E` where `E`
/// is one past the largest id referenced by `blocks`.
pub fn assemble_problem(
    network: Network,
    agents: Vec<AgentProblem>,
    blocks: Vec<ConstraintBlock>,
) -> Result<ProblemSpec> {
    if agents.len() != network.agents() {
        return Err(Error::DimensionMismatch(format!(
            "{} agent problems for a network of {} agents",
            agents.len(),
            network.agents()
        )));
    }
    for a in &agents {
        a.regularizer.check(a.cost.dim())?;
    }
    let count = blocks.iter().map(|b| b.constraint + 1).max().unwrap_or(0);
    let mut grouped: Vec<Vec<ConstraintBlock>> = vec![Vec::new(); count];
    for b in blocks {
        if b.agent >= agents.len() {
            return Err(Error::AgentOutOfRange {
                agent: b.agent,
                agents: agents.len(),
            });
        }
        let q = agents[b.agent].cost.dim();
        if b.matrix.ncols() != q || b.rhs.len() != b.matrix.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "block (constraint {}, agent {}) is {}×{} with rhs {} but the agent has dimension {q}",
                b.constraint,
                b.agent,
                b.matrix.nrows(),
                b.matrix.ncols(),
                b.rhs.len()
            )));
        }
        grouped[b.constraint].push(b);
    }

    let mut constraints = Vec::with_capacity(count);
    for (e, mut group) in grouped.into_iter().enumerate() {
        if group.is_empty() {
            return Err(Error::EmptyConstraint(e));
        }
        group.sort_by_key(|b| b.agent);
        if group.windows(2).any(|w| w[0].agent == w[1].agent) {
            return Err(Error::InvalidParameter(format!(
                "constraint {e} has more than one block for the same agent"
            )));
        }
        let rows = group[0].matrix.nrows();
        if rows == 0 || group.iter().any(|b| b.matrix.nrows() != rows) {
            return Err(Error::DimensionMismatch(format!(
                "blocks of constraint {e} disagree on the row count"
            )));
        }
        let members: Vec<usize> = group.iter().map(|b| b.agent).collect();
        let sub = induced_subnetwork(&network, &members, e)?;
        constraints.push(Constraint {
            sub,
            rows,
            blocks: group.into_iter().map(|b| (b.matrix, b.rhs)).collect(),
        });
    }
    Ok(ProblemSpec::index(network, agents, constraints))
}

impl ProblemSpec {
    fn index(network: Network, agents: Vec<AgentProblem>, constraints: Vec<Constraint>) -> Self {
        let mut memberships = vec![Vec::new(); agents.len()];
        let mut dual_offsets = Vec::with_capacity(constraints.len() + 1);
        let mut at = 0;
        for (e, c) in constraints.iter().enumerate() {
            dual_offsets.push(at);
            at += c.sub.size() * c.rows;
            for (position, &k) in c.sub.members().iter().enumerate() {
                memberships[k].push(Membership {
                    constraint: e,
                    position,
                });
            }
        }
        dual_offsets.push(at);
        let mut primal_offsets = Vec::with_capacity(agents.len() + 1);
        let mut at = 0;
        for a in &agents {
            primal_offsets.push(at);
            at += a.cost.dim();
        }
        primal_offsets.push(at);
        Self {
            network,
            agents,
            constraints,
            memberships,
            primal_offsets,
            dual_offsets,
        }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn agents(&self) -> &[AgentProblem] {
        &self.agents
    }

    pub fn agent(&self, k: usize) -> &AgentProblem {
        &self.agents[k]
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn constraint(&self, e: usize) -> &Constraint {
        &self.constraints[e]
    }

    /// 𝓔_k in ascending constraint order.
    pub fn memberships(&self, k: usize) -> &[Membership] {
        &self.memberships[k]
    }

    pub fn subnetworks(&self) -> Vec<SubNetwork> {
        self.constraints.iter().map(|c| c.sub.clone()).collect()
    }

    /// `S_e` for every constraint.
    pub fn block_sizes(&self) -> Vec<usize> {
        self.constraints.iter().map(|c| c.rows).collect()
    }

    pub fn agent_dim(&self, k: usize) -> usize {
        self.primal_offsets[k + 1] - self.primal_offsets[k]
    }

    pub fn primal_dim(&self) -> usize {
        *self
            .primal_offsets
            .last()
            .expect("offsets end with the total")
    }

    pub fn primal_offset(&self, k: usize) -> usize {
        self.primal_offsets[k]
    }

    /// `N = Σ_e N_e S_e`.
    pub fn dual_dim(&self) -> usize {
        *self
            .dual_offsets
            .last()
            .expect("offsets end with the total")
    }

    /// Offset of member `position` of constraint `e` in a stacked dual vector.
    pub fn dual_offset(&self, e: usize, position: usize) -> usize {
        self.dual_offsets[e] + position * self.constraints[e].rows
    }

    /// Splits a stacked primal vector into per-agent vectors.
    pub fn split_primal(&self, w: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.agent_count())
            .map(|k| {
                w.rows(self.primal_offsets[k], self.agent_dim(k))
                    .into_owned()
            })
            .collect()
    }

    pub fn stack_primal(&self, parts: &[DVector<f64>]) -> DVector<f64> {
        linalg::stack(parts)
    }

    /// `𝓑 w`, one `B_{e,k} w_k` block per (constraint, member).
    pub fn apply_coupling(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dual_dim());
        for (e, c) in self.constraints.iter().enumerate() {
            for (p, (&k, (b, _))) in c.sub.members().iter().zip(&c.blocks).enumerate() {
                let wk = w.rows(self.primal_offsets[k], self.agent_dim(k));
                out.rows_mut(self.dual_offset(e, p), c.rows)
                    .copy_from(&(b * wk));
            }
        }
        out
    }

    /// `𝓑ᵀ y`, i.e. `Σ_{e∈𝓔_k} B_{e,k}ᵀ y_k^e` for every agent.
    pub fn apply_coupling_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.primal_dim());
        for (e, c) in self.constraints.iter().enumerate() {
            for (p, (&k, (b, _))) in c.sub.members().iter().zip(&c.blocks).enumerate() {
                let yk = y.rows(self.dual_offset(e, p), c.rows);
                let mut slot = out.rows_mut(self.primal_offsets[k], self.agent_dim(k));
                slot += b.tr_mul(&yk);
            }
        }
        out
    }

    /// Stacked `b` in the dual layout.
    pub fn rhs_stack(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.dual_dim());
        for (e, c) in self.constraints.iter().enumerate() {
            for (p, (_, rhs)) in c.blocks.iter().enumerate() {
                out.rows_mut(self.dual_offset(e, p), c.rows).copy_from(rhs);
            }
        }
        out
    }

    /// `Σ_{k∈𝓒_e}(B_{e,k} w_k − b_{e,k})` for each constraint.
    pub fn constraint_residuals(&self, w: &DVector<f64>) -> Vec<DVector<f64>> {
        self.constraints
            .iter()
            .map(|c| {
                let mut acc = DVector::zeros(c.rows);
                for (&k, (b, rhs)) in c.sub.members().iter().zip(&c.blocks) {
                    acc += b * w.rows(self.primal_offsets[k], self.agent_dim(k)) - rhs;
                }
                acc
            })
            .collect()
    }

    /// Euclidean norm of all constraint residuals together.
    pub fn feasibility_norm(&self, w: &DVector<f64>) -> f64 {
        self.constraint_residuals(w)
            .iter()
            .map(DVector::norm_squared)
            .sum::<f64>()
            .sqrt()
    }

    /// `∇𝓙(w)`.
    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let parts: Vec<_> = self
            .split_primal(w)
            .iter()
            .zip(&self.agents)
            .map(|(wk, a)| a.cost.gradient(wk))
            .collect();
        linalg::stack(&parts)
    }

    /// `𝓙(w) + 𝓡(w)`.
    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        self.split_primal(w)
            .iter()
            .zip(&self.agents)
            .map(|(wk, a)| a.cost.value(wk) + a.regularizer.value(wk))
            .sum()
    }

    /// Agent-wise `prox_{μ 𝓡}`.
    pub fn prox(&self, mu: f64, x: &DVector<f64>) -> DVector<f64> {
        let parts: Vec<_> = self
            .split_primal(x)
            .iter()
            .zip(&self.agents)
            .map(|(xk, a)| a.regularizer.prox(mu, xk))
            .collect();
        linalg::stack(&parts)
    }

    /// `dist(g, ∂𝓡(w))`.
    pub fn subdifferential_distance(&self, w: &DVector<f64>, g: &DVector<f64>) -> f64 {
        let ws = self.split_primal(w);
        let gs = self.split_primal(g);
        ws.iter()
            .zip(&gs)
            .zip(&self.agents)
            .map(|((wk, gk), a)| a.regularizer.subdifferential_distance(wk, gk).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_regularizers_zero(&self) -> bool {
        self.agents.iter().all(|a| a.regularizer.is_zero())
    }

    pub fn all_costs_quadratic(&self) -> bool {
        self.agents
            .iter()
            .all(|a| a.cost.quadratic_form().is_some())
    }

    /// `G_k = blkcol{B_{e,k}}_{e∈𝓔_k}`.
    pub fn agent_coupling(&self, k: usize) -> DMatrix<f64> {
        let q = self.agent_dim(k);
        let rows: usize = self.memberships[k]
            .iter()
            .map(|m| self.constraints[m.constraint].rows)
            .sum();
        let mut g = DMatrix::zeros(rows, q);
        let mut at = 0;
        for m in &self.memberships[k] {
            let c = &self.constraints[m.constraint];
            g.view_mut((at, 0), (c.rows, q))
                .copy_from(&c.blocks[m.position].0);
            at += c.rows;
        }
        g
    }

    /// `λ_max(𝓑ᵀ𝓑)`; `𝓑ᵀ𝓑` is block diagonal with blocks `G_kᵀG_k`.
    pub fn coupling_lambda_max(&self) -> f64 {
        (0..self.agent_count())
            .map(|k| {
                let g = self.agent_coupling(k);
                linalg::lambda_max(&g.tr_mul(&g))
            })
            .fold(0.0, f64::max)
    }

    /// `λ_min(𝓑𝓑ᵀ)`; up to a permutation `𝓑𝓑ᵀ` is block diagonal with
    /// blocks `G_kG_kᵀ`. Returns 0 when there are no constraints.
    pub fn coupling_lambda_min(&self) -> f64 {
        (0..self.agent_count())
            .filter(|&k| !self.memberships[k].is_empty())
            .map(|k| {
                let g = self.agent_coupling(k);
                linalg::lambda_min(&(&g * g.transpose()))
            })
            .reduce(f64::min)
            .unwrap_or(0.0)
    }

    /// Whether every `G_k` has full row rank.
    pub fn coupling_full_row_rank(&self) -> bool {
        (0..self.agent_count()).all(|k| {
            let g = self.agent_coupling(k);
            g.nrows() == 0 || linalg::numerical_rank(&g, 1e-10) == g.nrows()
        })
    }

    /// A copy with every `b_{e,k}` replaced by `rhs[e][position]`.
    pub fn with_rhs(&self, rhs: &[Vec<DVector<f64>>]) -> Result<Self> {
        let mut out = self.clone();
        for (c, new) in out.constraints.iter_mut().zip(rhs) {
            if new.len() != c.blocks.len() || new.iter().any(|r| r.len() != c.rows) {
                return Err(Error::DimensionMismatch(
                    "replacement rhs has the wrong shape".into(),
                ));
            }
            for ((_, b), r) in c.blocks.iter_mut().zip(new) {
                b.clone_from(r);
            }
        }
        Ok(out)
    }

    /// Blocks in `(constraint, agent)` order, suitable for re-assembly.
    pub fn blocks(&self) -> Vec<ConstraintBlock> {
        let mut out = Vec::new();
        for (e, c) in self.constraints.iter().enumerate() {
            for (&k, (b, rhs)) in c.sub.members().iter().zip(&c.blocks) {
                out.push(ConstraintBlock {
                    constraint: e,
                    agent: k,
                    matrix: b.clone(),
                    rhs: rhs.clone(),
                });
            }
        }
        out
    }
}

/// `ν = min_k ν_k`, `δ = max_k δ_k`.
pub fn smoothness_params(problem: &ProblemSpec) -> Smoothness {
    let nu = problem
        .agents
        .iter()
        .map(|a| a.cost.modulus())
        .fold(f64::INFINITY, f64::min);
    let delta = problem
        .agents
        .iter()
        .map(|a| a.cost.lipschitz())
        .fold(0.0, f64::max);
    Smoothness { nu, delta }
}

/// `b_{e,k} = B_{e,k} w0_k` for every block, which makes `w0` feasible.
pub fn feasible_rhs(blocks: &[ConstraintBlock], w0: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    blocks
        .iter()
        .map(|b| {
            let w = w0.get(b.agent).ok_or(Error::AgentOutOfRange {
                agent: b.agent,
                agents: w0.len(),
            })?;
            if w.len() != b.matrix.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "feasible point of agent {} has length {}, block expects {}",
                    b.agent,
                    w.len(),
                    b.matrix.ncols()
                )));
            }
            Ok(&b.matrix * w)
        })
        .collect()
}
