//! The dual coupled diffusion recursion in three equivalent forms.
//!
//! * [`Form::Agent`]: each agent keeps its own `w_k` and, per constraint it
//!   belongs to, the pair `(v_k^e, ψ_k^e)`; dual vectors are exchanged only
//!   with neighbors inside the same sub-network.
//! * [`Form::Network`]: the stacked two-step recursion on `𝓎`.
//! * [`Form::XForm`]: the stacked recursion driven by the reduced sequence `𝔁`.
//!
//! Round 0 performs the primal step and the local dual ascent only; the first
//! exchange happens in round 1. All forms therefore start from
//! `𝓎_0 = 𝓎_{-1} + μ_v(𝓑𝔀_0 − b)` and `𝔁_0 = 0`.

mod agent;
mod baseline;
mod network;
mod run;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::combiners::CombinationSet;
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;

pub use agent::{agent_round, agent_round_ordered, AgentState, DualCopy};
pub use baseline::{communication_cost, flatten_to_single_constraint};
pub use network::{network_round, xform_round, NetworkState, XFormState};
pub use run::{
    run, run_observed, Engine, Init, RunOptions, RunResult, Trace, TraceRecord, DIVERGENCE_NORM,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub mu_w: f64,
    pub mu_v: f64,
}

impl StepSizes {
    pub fn new(mu_w: f64, mu_v: f64) -> Result<Self> {
        if !(mu_w > 0.0 && mu_w.is_finite() && mu_v > 0.0 && mu_v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step sizes must be positive and finite, got μ_w = {mu_w}, μ_v = {mu_v}"
            )));
        }
        Ok(Self { mu_w, mu_v })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Agent,
    Network,
    XForm,
}

impl Form {
    pub const ALL: [Form; 3] = [Form::Agent, Form::Network, Form::XForm];

    pub fn name(self) -> &'static str {
        match self {
            Form::Agent => "agent",
            Form::Network => "network",
            Form::XForm => "xform",
        }
    }
}

impl std::str::FromStr for Form {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agent" => Ok(Form::Agent),
            "network" => Ok(Form::Network),
            "xform" => Ok(Form::XForm),
            other => Err(Error::Config(format!("unknown solver form `{other}`"))),
        }
    }
}

/// Everything a round reads besides the iterates.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    pub problem: &'a ProblemSpec,
    pub combination: &'a CombinationSet,
    pub steps: StepSizes,
}

impl<'a> Context<'a> {
    pub fn new(
        problem: &'a ProblemSpec,
        combination: &'a CombinationSet,
        steps: StepSizes,
    ) -> Result<Self> {
        if combination.matrices.len() != problem.constraint_count()
            || combination.spectral.dual_dim() != problem.dual_dim()
        {
            return Err(Error::DimensionMismatch(format!(
                "{} combination matrices over {} dual entries for {} constraints over {} dual entries",
                combination.matrices.len(),
                combination.spectral.dual_dim(),
                problem.constraint_count(),
                problem.dual_dim()
            )));
        }
        for (m, c) in combination.matrices.iter().zip(problem.constraints()) {
            if m.size() != c.sub.size() {
                return Err(Error::DimensionMismatch(format!(
                    "combination matrix {} has size {} but the sub-network has {} members",
                    m.constraint,
                    m.size(),
                    c.sub.size()
                )));
            }
        }
        Ok(Self {
            problem,
            combination,
            steps,
        })
    }

    /// `𝔁 = Σ⁻¹U₁ᵀ(𝓎_i − ψ_i)/μ_v`, the reduced variable implied by a dual
    /// iterate and the dual-ascent point it was combined from.
    pub fn reduced_from(&self, y: &DVector<f64>, psi: &DVector<f64>) -> DVector<f64> {
        let sd = &self.combination.spectral;
        let mut x = sd.project(&(y - psi));
        for (xi, s) in x.iter_mut().zip(sd.sigma().iter()) {
            *xi /= s * self.steps.mu_v;
        }
        x
    }
}

/// Iterates after round `round`, in stacked network layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub round: usize,
    pub w: DVector<f64>,
    pub y: DVector<f64>,
    pub x: DVector<f64>,
}

#[cfg(test)]
mod tests;
