//! Per-agent form: every agent updates from its own data and the corrected
//! dual vectors its neighbors send for the constraints they share.

use nalgebra::DVector;

use super::{Context, StepSizes};

/// Agent `k`'s copy of the dual variable of one constraint it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCopy {
    pub constraint: usize,
    pub position: usize,
    pub v: DVector<f64>,
    pub psi: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub w: DVector<f64>,
    /// One entry per constraint in 𝓔_k, ascending.
    pub duals: Vec<DualCopy>,
}

impl AgentState {
    /// States with the given `w_{-1}` and `v_{-1} = ψ_{-1}` read from a stacked dual vector.
    pub fn from_stacked(ctx: &Context, w: &DVector<f64>, y: &DVector<f64>) -> Vec<AgentState> {
        let p = ctx.problem;
        let ws = p.split_primal(w);
        ws.into_iter()
            .enumerate()
            .map(|(k, w)| AgentState {
                w,
                duals: p
                    .memberships(k)
                    .iter()
                    .map(|m| {
                        let rows = p.constraint(m.constraint).rows;
                        let v = y
                            .rows(p.dual_offset(m.constraint, m.position), rows)
                            .into_owned();
                        DualCopy {
                            constraint: m.constraint,
                            position: m.position,
                            psi: v.clone(),
                            v,
                        }
                    })
                    .collect(),
            })
            .collect()
    }

    /// Stacked `(𝔀, 𝓎, ψ)`.
    pub fn stack(
        ctx: &Context,
        states: &[AgentState],
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let p = ctx.problem;
        let w = p.stack_primal(&states.iter().map(|s| s.w.clone()).collect::<Vec<_>>());
        let mut y = DVector::zeros(p.dual_dim());
        let mut psi = DVector::zeros(p.dual_dim());
        for s in states {
            for d in &s.duals {
                let at = p.dual_offset(d.constraint, d.position);
                y.rows_mut(at, d.v.len()).copy_from(&d.v);
                psi.rows_mut(at, d.psi.len()).copy_from(&d.psi);
            }
        }
        (w, y, psi)
    }
}

/// One synchronous round. `first` marks round 0, which skips the exchange.
pub fn agent_round(ctx: &Context, states: &[AgentState], first: bool) -> Vec<AgentState> {
    let order: Vec<usize> = (0..states.len()).collect();
    agent_round_ordered(ctx, states, first, &order)
}

/// [`agent_round`] visiting agents in `order`. Every read is from the
/// previous round, so the result does not depend on `order`.
pub fn agent_round_ordered(
    ctx: &Context,
    states: &[AgentState],
    first: bool,
    order: &[usize],
) -> Vec<AgentState> {
    let p = ctx.problem;
    let StepSizes { mu_w, mu_v } = ctx.steps;

    // Local computation: primal step, dual ascent and correction.
    let mut next: Vec<Option<AgentState>> = vec![None; states.len()];
    let mut corrected: Vec<Vec<DVector<f64>>> = vec![Vec::new(); states.len()];
    for &k in order {
        let prev = &states[k];
        let agent = p.agent(k);
        let mut z = &prev.w - agent.cost.gradient(&prev.w) * mu_w;
        for d in &prev.duals {
            let (b, _) = &p.constraint(d.constraint).blocks[d.position];
            z -= b.tr_mul(&d.v) * mu_w;
        }
        let w = agent.regularizer.prox(mu_w, &z);

        let mut duals = Vec::with_capacity(prev.duals.len());
        let mut phis = Vec::with_capacity(prev.duals.len());
        for d in &prev.duals {
            let (b, rhs) = &p.constraint(d.constraint).blocks[d.position];
            let psi = &d.v + (b * &w - rhs) * mu_v;
            phis.push(&psi + &d.v - &d.psi);
            duals.push(DualCopy {
                constraint: d.constraint,
                position: d.position,
                v: psi.clone(),
                psi,
            });
        }
        next[k] = Some(AgentState { w, duals });
        corrected[k] = phis;
    }
    let mut next: Vec<AgentState> = next
        .into_iter()
        .map(|s| s.expect("every agent visited"))
        .collect();
    if first {
        return next;
    }

    // Exchange: v_k^e = Σ_{s∈𝓝_k∩𝓒_e} ā_{e,sk} φ_s^e.
    let slot = |s: usize, e: usize| {
        next[s]
            .duals
            .iter()
            .position(|d| d.constraint == e)
            .expect("members hold a copy of every constraint they belong to")
    };
    let mut combined: Vec<Vec<DVector<f64>>> = vec![Vec::new(); states.len()];
    for &k in order {
        combined[k] = next[k]
            .duals
            .iter()
            .enumerate()
            .map(|(j, d)| {
                let c = p.constraint(d.constraint);
                let abar = &ctx.combination.matrices[d.constraint].averaged;
                let mut acc = &corrected[k][j] * abar[(d.position, d.position)];
                for &q in c.sub.local_neighbors(d.position) {
                    let s = c.sub.members()[q];
                    acc += &corrected[s][slot(s, d.constraint)] * abar[(q, d.position)];
                }
                acc
            })
            .collect();
    }
    for (state, vs) in next.iter_mut().zip(combined) {
        for (d, v) in state.duals.iter_mut().zip(vs) {
            d.v = v;
        }
    }
    next
}
