use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::analysis::{step_size_limits, Reference};
use crate::combiners::CombinationSet;
use crate::problem::generators::{
    random_instance, two_agent_quadratic, RandomInstanceOptions, RegularizerMix,
};
use crate::problem::{assemble_problem, ConstraintBlock};

fn combination(p: &ProblemSpec) -> CombinationSet {
    CombinationSet::metropolis(&p.subnetworks(), &p.block_sizes()).unwrap()
}

fn safe_steps(p: &ProblemSpec) -> StepSizes {
    let l = step_size_limits(p).unwrap();
    let mu_v = if l.mu_v_max.is_finite() {
        0.5 * l.mu_v_max
    } else {
        0.5
    };
    StepSizes::new(0.5 * l.mu_w_max, mu_v).unwrap()
}

fn two_agent_reference(set: &CombinationSet) -> Reference {
    let p = two_agent_quadratic();
    Reference::new(
        &p,
        &set.spectral,
        DVector::from_vec(vec![0.0, 2.0]),
        &[DVector::from_element(1, 1.0)],
        true,
    )
    .unwrap()
}

fn max_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / (1.0 + a.amax().max(b.amax()))
}

#[test]
fn saddle_point_is_a_fixed_point_of_the_stacked_forms() {
    let p = two_agent_quadratic();
    let set = combination(&p);
    let ctx = Context::new(&p, &set, StepSizes::new(0.3, 0.3).unwrap()).unwrap();
    let r = two_agent_reference(&set);

    let xs = XFormState {
        w: r.w.clone(),
        y: r.y.clone(),
        x: r.x.clone(),
    };
    let next = xform_round(&ctx, &xs, false);
    assert!(max_diff(&next.w, &r.w) < 1e-15);
    assert!(max_diff(&next.y, &r.y) < 1e-15);
    assert!(max_diff(&next.x, &r.x) < 1e-15);

    let ns = NetworkState {
        w: r.w.clone(),
        y: r.y.clone(),
        y_prev: r.y.clone(),
        psi: r.y.clone(),
    };
    let next = network_round(&ctx, &ns, false);
    assert!(max_diff(&next.w, &r.w) < 1e-15);
    assert!(max_diff(&next.y, &r.y) < 1e-15);
}

#[test]
fn two_agent_run_converges_to_the_known_solution() {
    let p = two_agent_quadratic();
    let set = combination(&p);
    let ctx = Context::new(&p, &set, StepSizes::new(0.3, 0.3).unwrap()).unwrap();
    let r = two_agent_reference(&set);
    for form in Form::ALL {
        let opts = RunOptions {
            rounds: 400,
            ..Default::default()
        };
        let out = run(&ctx, form, &opts, Some(&r)).unwrap();
        assert_eq!(out.rounds_completed, 400);
        assert!(
            max_diff(&out.final_state.w, &r.w) < 1e-10,
            "{form:?}: {}",
            out.final_state.w
        );
        assert!(max_diff(&out.final_state.y, &r.y) < 1e-10);
        let last = out.trace.last().unwrap();
        assert!(last.rel_error.unwrap() < 1e-20);
        assert!(last.constraint_residual < 1e-10);
        assert!(last.consensus_residual < 1e-10);
    }
}

#[test]
fn zero_rounds_return_the_initial_state() {
    let p = two_agent_quadratic();
    let set = combination(&p);
    let ctx = Context::new(&p, &set, StepSizes::new(0.3, 0.3).unwrap()).unwrap();
    let opts = RunOptions {
        rounds: 0,
        init: Init::Random { seed: 4 },
        ..Default::default()
    };
    let out = run(&ctx, Form::Agent, &opts, None).unwrap();
    let (w, y) = Init::Random { seed: 4 }.draw(2, 2);
    assert!(out.trace.records.is_empty());
    assert_eq!(out.rounds_completed, 0);
    assert_eq!(out.final_state.w, w);
    assert_eq!(out.final_state.y, y);
}

#[test]
fn communication_is_counted_per_exchange_round() {
    let p = two_agent_quadratic();
    assert_eq!(communication_cost(&p), 2);
    let set = combination(&p);
    let ctx = Context::new(&p, &set, StepSizes::new(0.3, 0.3).unwrap()).unwrap();
    let opts = RunOptions {
        rounds: 5,
        ..Default::default()
    };
    let out = run(&ctx, Form::Network, &opts, None).unwrap();
    let comm: Vec<u64> = out.trace.records.iter().map(|r| r.comm_scalars).collect();
    assert_eq!(comm, vec![0, 2, 4, 6, 8]);
    assert!(out
        .trace
        .records
        .iter()
        .all(|r| r.rel_error.is_none() && r.lyapunov.is_none()));
}

#[test]
fn early_stop_and_divergence() {
    let p = two_agent_quadratic();
    let set = combination(&p);
    let r = two_agent_reference(&set);
    let ctx = Context::new(&p, &set, StepSizes::new(0.3, 0.3).unwrap()).unwrap();
    let opts = RunOptions {
        rounds: 1000,
        stop_below: Some(1e-6),
        ..Default::default()
    };
    let out = run(&ctx, Form::XForm, &opts, Some(&r)).unwrap();
    assert!(out.stopped_early);
    assert!(out.rounds_completed < 1000);
    assert!(out.trace.last().unwrap().rel_error.unwrap() < 1e-6);

    let ctx = Context::new(&p, &set, StepSizes::new(2.5, 2.5).unwrap()).unwrap();
    let opts = RunOptions {
        rounds: 2000,
        ..Default::default()
    };
    match run(&ctx, Form::Network, &opts, None) {
        Err(crate::Error::Divergence { diagnostic, .. }) => {
            assert!(diagnostic.contains("VIOLATES"), "{diagnostic}")
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn zero_coupling_reduces_to_proximal_gradient() {
    let p = random_instance(
        11,
        &RandomInstanceOptions {
            regularizers: RegularizerMix::Any,
            ..Default::default()
        },
    )
    .unwrap();
    let blocks: Vec<ConstraintBlock> = p
        .blocks()
        .into_iter()
        .map(|b| ConstraintBlock {
            matrix: DMatrix::zeros(b.matrix.nrows(), b.matrix.ncols()),
            rhs: DVector::zeros(b.rhs.len()),
            ..b
        })
        .collect();
    let p = assemble_problem(p.network().clone(), p.agents().to_vec(), blocks).unwrap();
    let set = combination(&p);
    let steps = StepSizes::new(0.1, 0.7).unwrap();
    let ctx = Context::new(&p, &set, steps).unwrap();
    let init = Init::Random { seed: 3 };
    let out = run(
        &ctx,
        Form::Agent,
        &RunOptions {
            rounds: 30,
            init,
            record_snapshots: true,
            ..Default::default()
        },
        None,
    )
    .unwrap();
    let (mut w, y0) = init.draw(p.primal_dim(), p.dual_dim());
    for s in &out.snapshots {
        w = p.prox(
            steps.mu_w,
            &(&w - p.gradient(&w) * steps.mu_w - p.apply_coupling_transpose(&y0) * steps.mu_w),
        );
        assert!(max_diff(&s.w, &w) < 1e-14, "round {}", s.round);
    }
}

#[test]
fn agent_order_does_not_change_the_round() {
    let p = random_instance(5, &RandomInstanceOptions::default()).unwrap();
    let set = combination(&p);
    let ctx = Context::new(&p, &set, safe_steps(&p)).unwrap();
    let (w, y) = Init::Random { seed: 8 }.draw(p.primal_dim(), p.dual_dim());
    let mut a = AgentState::from_stacked(&ctx, &w, &y);
    let mut b = a.clone();
    let mut order: Vec<usize> = (0..p.agent_count()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..20 {
        order.shuffle(&mut rng);
        a = agent_round(&ctx, &a, i == 0);
        b = agent_round_ordered(&ctx, &b, i == 0, &order);
        assert_eq!(a, b);
    }
}

#[test]
fn flattening_keeps_the_aggregate_constraints() {
    let p = random_instance(9, &RandomInstanceOptions::default()).unwrap();
    let f = flatten_to_single_constraint(&p).unwrap();
    assert_eq!(f.constraint_count(), 1);
    assert_eq!(f.constraint(0).sub.size(), p.agent_count());
    assert_eq!(f.constraint(0).rows, p.block_sizes().iter().sum::<usize>());
    let (w, _) = Init::Random { seed: 2 }.draw(p.primal_dim(), 0);
    let flat: Vec<f64> = p
        .constraint_residuals(&w)
        .iter()
        .flat_map(|r| r.iter().copied())
        .collect();
    let res = &f.constraint_residuals(&w)[0];
    assert!(max_diff(res, &DVector::from_vec(flat)) < 1e-14);
    // Every agent now exchanges the whole stacked dual.
    assert!(communication_cost(&f) >= communication_cost(&p));
}

fn assert_forms_agree(p: &ProblemSpec, rounds: usize, seed: u64) {
    let set = combination(p);
    let ctx = Context::new(p, &set, safe_steps(p)).unwrap();
    let opts = RunOptions {
        rounds,
        init: Init::Random { seed },
        record_snapshots: true,
        ..Default::default()
    };
    let runs: Vec<RunResult> = Form::ALL
        .iter()
        .map(|&f| run(&ctx, f, &opts, None).unwrap())
        .collect();
    for other in &runs[1..] {
        for (a, b) in runs[0].snapshots.iter().zip(&other.snapshots) {
            assert!(
                max_diff(&a.w, &b.w) < 1e-9,
                "w differs at round {}",
                a.round
            );
            assert!(
                max_diff(&a.y, &b.y) < 1e-9,
                "y differs at round {}",
                a.round
            );
            assert!(
                max_diff(&a.x, &b.x) < 1e-8,
                "x differs at round {}",
                a.round
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn the_three_forms_produce_the_same_iterates(seed in 0u64..10_000, any_reg in any::<bool>()) {
        let opts = RandomInstanceOptions {
            regularizers: if any_reg { RegularizerMix::Any } else { RegularizerMix::SmoothOrL1 },
            ..Default::default()
        };
        let p = random_instance(seed, &opts).unwrap();
        assert_forms_agree(&p, 200, seed);
    }

    #[test]
    fn x_iterates_reproduce_the_dual_iterates(seed in 0u64..10_000) {
        // 𝓎_i = ψ_i + μ_v U₁Σ𝔁_i, where ψ_i is the local dual ascent point.
        let p = random_instance(seed, &RandomInstanceOptions::default()).unwrap();
        let set = combination(&p);
        let ctx = Context::new(&p, &set, safe_steps(&p)).unwrap();
        let (w, y) = Init::Random { seed }.draw(p.primal_dim(), p.dual_dim());
        let mut s = XFormState::initial(&ctx, w, y);
        for i in 0..30 {
            let prev_y = s.y.clone();
            s = xform_round(&ctx, &s, i == 0);
            let psi = &prev_y + (p.apply_coupling(&s.w) - p.rhs_stack()) * ctx.steps.mu_v;
            let rebuilt = &psi + set.spectral.lift(&s.x.component_mul(set.spectral.sigma())) * ctx.steps.mu_v;
            prop_assert!(max_diff(&rebuilt, &s.y) < 1e-12);
            prop_assert!(max_diff(&ctx.reduced_from(&s.y, &psi), &s.x) < 1e-8);
        }
    }
}
