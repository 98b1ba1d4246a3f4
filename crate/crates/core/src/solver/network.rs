//! Stacked forms of the recursion.

use nalgebra::DVector;

use super::Context;

/// `prox_{μ_w𝓡}(𝔀 − μ_w∇𝓙(𝔀) − μ_w𝓑ᵀ𝓎)`.
fn primal_step(ctx: &Context, w: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let p = ctx.problem;
    let mu = ctx.steps.mu_w;
    let z = w - (p.gradient(w) + p.apply_coupling_transpose(y)) * mu;
    p.prox(mu, &z)
}

/// `𝓎 + μ_v(𝓑𝔀 − b)`.
fn dual_ascent(ctx: &Context, y: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let p = ctx.problem;
    y + (p.apply_coupling(w) - p.rhs_stack()) * ctx.steps.mu_v
}

/// Two-step memory of the stacked recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub w: DVector<f64>,
    pub y: DVector<f64>,
    pub y_prev: DVector<f64>,
    /// `𝓎_{i-1} + μ_v(𝓑𝔀_i − b)`, kept to recover `𝔁_i`.
    pub psi: DVector<f64>,
}

impl NetworkState {
    pub fn initial(w: DVector<f64>, y: DVector<f64>) -> Self {
        Self {
            psi: y.clone(),
            y_prev: y.clone(),
            w,
            y,
        }
    }
}

pub fn network_round(ctx: &Context, s: &NetworkState, first: bool) -> NetworkState {
    let w = primal_step(ctx, &s.w, &s.y);
    let psi = dual_ascent(ctx, &s.y, &w);
    let y = if first {
        psi.clone()
    } else {
        let coupled_step = ctx.problem.apply_coupling(&(&w - &s.w)) * ctx.steps.mu_v;
        let inner = &s.y * 2.0 - &s.y_prev + coupled_step;
        ctx.combination.spectral.apply_averaged(&inner)
    };
    NetworkState {
        w,
        y_prev: s.y.clone(),
        y,
        psi,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XFormState {
    pub w: DVector<f64>,
    pub y: DVector<f64>,
    pub x: DVector<f64>,
}

impl XFormState {
    pub fn initial(ctx: &Context, w: DVector<f64>, y: DVector<f64>) -> Self {
        Self {
            w,
            y,
            x: DVector::zeros(ctx.combination.spectral.rank()),
        }
    }
}

pub fn xform_round(ctx: &Context, s: &XFormState, first: bool) -> XFormState {
    let sd = &ctx.combination.spectral;
    let mu_v = ctx.steps.mu_v;
    let w = primal_step(ctx, &s.w, &s.y);
    let ascent = dual_ascent(ctx, &s.y, &w);
    if first {
        return XFormState {
            w,
            y: ascent,
            x: DVector::zeros(sd.rank()),
        };
    }
    let sigma_x_prev = s.x.component_mul(sd.sigma());
    let x = &s.x - (sd.project(&ascent) / mu_v + &sigma_x_prev);
    let y = &ascent + sd.lift(&x.component_mul(sd.sigma())) * mu_v;
    XFormState { w, y, x }
}
