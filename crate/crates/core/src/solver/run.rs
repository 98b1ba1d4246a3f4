//! Running a form for a number of rounds and recording its trace.

use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    agent_round, network_round, xform_round, AgentState, Context, Form, NetworkState, Snapshot,
    XFormState,
};
use crate::analysis::{lyapunov, relative_error, step_size_limits, Reference};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};
use crate::solver::communication_cost;

/// Iterates whose norm exceeds this are treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Iterate state of one of the three forms.
#[derive(Debug, Clone, PartialEq)]
pub enum Engine {
    Agent(Vec<AgentState>),
    Network(NetworkState),
    XForm(XFormState),
}

impl Engine {
    /// Starts from `(𝔀_{-1}, 𝓎_{-1})`.
    pub fn new(form: Form, ctx: &Context, w: DVector<f64>, y: DVector<f64>) -> Self {
        match form {
            Form::Agent => Engine::Agent(AgentState::from_stacked(ctx, &w, &y)),
            Form::Network => Engine::Network(NetworkState::initial(w, y)),
            Form::XForm => Engine::XForm(XFormState::initial(ctx, w, y)),
        }
    }

    pub fn form(&self) -> Form {
        match self {
            Engine::Agent(_) => Form::Agent,
            Engine::Network(_) => Form::Network,
            Engine::XForm(_) => Form::XForm,
        }
    }

    pub fn step(&mut self, ctx: &Context, first: bool) {
        *self = match self {
            Engine::Agent(s) => Engine::Agent(agent_round(ctx, s, first)),
            Engine::Network(s) => Engine::Network(network_round(ctx, s, first)),
            Engine::XForm(s) => Engine::XForm(xform_round(ctx, s, first)),
        };
    }

    /// Stacked iterates labelled with `round`.
    pub fn snapshot(&self, ctx: &Context, round: usize) -> Snapshot {
        let (w, y, x) = match self {
            Engine::Agent(states) => {
                let (w, y, psi) = AgentState::stack(ctx, states);
                let x = ctx.reduced_from(&y, &psi);
                (w, y, x)
            }
            Engine::Network(s) => (s.w.clone(), s.y.clone(), ctx.reduced_from(&s.y, &s.psi)),
            Engine::XForm(s) => (s.w.clone(), s.y.clone(), s.x.clone()),
        };
        Snapshot { round, w, y, x }
    }
}

/// How `(𝔀_{-1}, 𝓎_{-1})` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Init {
    #[default]
    Zero,
    /// Standard normal entries drawn from the initial-state stream of `seed`.
    Random { seed: u64 },
}

impl Init {
    pub fn draw(&self, primal_dim: usize, dual_dim: usize) -> (DVector<f64>, DVector<f64>) {
        match *self {
            Init::Zero => (DVector::zeros(primal_dim), DVector::zeros(dual_dim)),
            Init::Random { seed } => {
                let mut rng = stream_rng(seed, stream::INITIAL_STATE);
                let w = DVector::from_fn(primal_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let y = DVector::from_fn(dual_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                (w, y)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOptions {
    /// Rounds `0..rounds` are executed.
    pub rounds: usize,
    pub init: Init,
    /// Stop once the relative error drops below this (needs a reference).
    pub stop_below: Option<f64>,
    pub record_snapshots: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: usize,
    pub rel_error: Option<f64>,
    /// `‖𝓑𝔀 − b‖` summed over agents, across all constraints.
    pub constraint_residual: f64,
    /// `‖U₁ᵀ𝓎‖`
    pub consensus_residual: f64,
    pub lyapunov: Option<f64>,
    /// Scalars sent over the network up to and including this round.
    pub comm_scalars: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    /// The relative error fell back to the absolute form because a reference block is zero.
    pub absolute_error: bool,
}

impl Trace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let records = r
            .deserialize()
            .collect::<std::result::Result<Vec<TraceRecord>, _>>()?;
        Ok(Self {
            records,
            absolute_error: false,
        })
    }

    /// First record whose error is below `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<&TraceRecord> {
        self.records
            .iter()
            .find(|r| r.rel_error.is_some_and(|e| e < threshold))
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub trace: Trace,
    /// One per completed round when requested.
    pub snapshots: Vec<Snapshot>,
    /// Iterates after the last completed round, or the initial state when none ran.
    pub final_state: Snapshot,
    pub rounds_completed: usize,
    pub stopped_early: bool,
}

fn diverged(s: &Snapshot) -> bool {
    let bad = |v: &DVector<f64>| v.iter().any(|a| !a.is_finite()) || v.norm() > DIVERGENCE_NORM;
    bad(&s.w) || bad(&s.y)
}

pub fn run(
    ctx: &Context,
    form: Form,
    opts: &RunOptions,
    reference: Option<&Reference>,
) -> Result<RunResult> {
    run_observed(ctx, form, opts, reference, &mut |_| {})
}

/// [`run`] that also hands every completed round's iterates to `observe`.
pub fn run_observed(
    ctx: &Context,
    form: Form,
    opts: &RunOptions,
    reference: Option<&Reference>,
    observe: &mut dyn FnMut(&Snapshot),
) -> Result<RunResult> {
    let p = ctx.problem;
    let sd = &ctx.combination.spectral;
    let (w0, y0) = opts.init.draw(p.primal_dim(), p.dual_dim());
    let mut engine = Engine::new(form, ctx, w0, y0);
    let per_round = communication_cost(p) as u64;

    let mut trace = Trace::default();
    let mut snapshots = Vec::new();
    let mut final_state = engine.snapshot(ctx, 0);
    final_state.x = DVector::zeros(sd.rank());
    let mut comm = 0u64;
    let mut stopped_early = false;
    let mut completed = 0;

    for i in 0..opts.rounds {
        engine.step(ctx, i == 0);
        if i > 0 {
            comm += per_round;
        }
        let snap = engine.snapshot(ctx, i);
        if diverged(&snap) {
            let limits = match step_size_limits(p) {
                Ok(l) => l.describe(ctx.steps),
                Err(e) => e.to_string(),
            };
            return Err(Error::Divergence {
                round: i,
                diagnostic: format!(
                    "iterates exceeded {DIVERGENCE_NORM:e} or became non-finite; {limits}"
                ),
            });
        }
        let (rel_error, lyap) = match reference {
            Some(r) => {
                let (e, absolute) = relative_error(p, &snap.w, &r.w);
                trace.absolute_error |= absolute;
                (Some(e), Some(lyapunov(&snap, r, ctx.steps, sd)))
            }
            None => (None, None),
        };
        trace.records.push(TraceRecord {
            round: i,
            rel_error,
            constraint_residual: p.feasibility_norm(&snap.w),
            consensus_residual: sd.consensus_residual(&snap.y),
            lyapunov: lyap,
            comm_scalars: comm,
        });
        completed = i + 1;
        observe(&snap);
        if opts.record_snapshots {
            snapshots.push(snap.clone());
        }
        final_state = snap;
        if let (Some(t), Some(e)) = (opts.stop_below, rel_error) {
            if e < t {
                stopped_early = completed < opts.rounds;
                break;
            }
        }
    }
    Ok(RunResult {
        trace,
        snapshots,
        final_state,
        rounds_completed: completed,
        stopped_early,
    })
}
