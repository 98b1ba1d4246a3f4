//! Synthetic instances: the regression and logistic network experiments, small
//! hand-checkable presets and random desk-scale instances for testing.

use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::cost::{Cost, LeastSquares, Logistic, Quadratic};
use super::regularizer::Regularizer;
use super::spec::{assemble_problem, feasible_rhs, AgentProblem, ConstraintBlock, ProblemSpec};
use crate::error::Result;
use crate::rng::{self, stream};
use crate::topology::{random_geometric_network, Network};

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Gaussian blocks on the neighborhood constraints `𝓒_e = 𝓝_e`, with right-hand
/// sides chosen so that an independent Gaussian point is feasible.
fn neighborhood_blocks(
    net: &Network,
    dims: &[usize],
    rows: usize,
    seed: u64,
) -> Result<Vec<ConstraintBlock>> {
    let mut rng = rng::stream_rng(seed, stream::CONSTRAINTS);
    let mut blocks = Vec::new();
    for e in 0..net.agents() {
        for k in net.neighborhood(e) {
            blocks.push(ConstraintBlock {
                constraint: e,
                agent: k,
                matrix: gaussian_matrix(&mut rng, rows, dims[k]),
                rhs: DVector::zeros(rows),
            });
        }
    }
    let mut rng = rng::stream_rng(seed, stream::FEASIBLE_POINT);
    let w0: Vec<_> = dims.iter().map(|&q| gaussian_vector(&mut rng, q)).collect();
    with_feasible_rhs(blocks, &w0)
}

fn with_feasible_rhs(
    blocks: Vec<ConstraintBlock>,
    w0: &[DVector<f64>],
) -> Result<Vec<ConstraintBlock>> {
    let rhs = feasible_rhs(&blocks, w0)?;
    Ok(blocks
        .into_iter()
        .zip(rhs)
        .map(|(b, rhs)| ConstraintBlock { rhs, ..b })
        .collect())
}

/// Sparse linear regression over a geometric network.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionParams {
    pub agents: usize,
    pub radius: f64,
    pub dim: usize,
    pub rows: usize,
    pub samples: usize,
    pub l1: f64,
    pub noise_variance: f64,
    /// Fraction of ground-truth entries set to zero.
    pub zero_fraction: f64,
}

impl Default for RegressionParams {
    fn default() -> Self {
        Self {
            agents: 20,
            radius: 0.3,
            dim: 10,
            rows: 3,
            samples: 1000,
            l1: 0.3,
            noise_variance: 0.1,
            zero_fraction: 0.2,
        }
    }
}

/// L1-regularized logistic regression over a geometric network.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticParams {
    pub agents: usize,
    pub radius: f64,
    pub dim: usize,
    pub rows: usize,
    pub samples: usize,
    pub l1: f64,
    pub l2: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            agents: 20,
            radius: 0.3,
            dim: 5,
            rows: 3,
            samples: 1000,
            l1: 0.1,
            l2: 0.1,
        }
    }
}

pub fn generate_regression_experiment(seed: u64) -> Result<ProblemSpec> {
    regression_experiment(&RegressionParams::default(), seed)
}

pub fn generate_logistic_experiment(seed: u64) -> Result<ProblemSpec> {
    logistic_experiment(&LogisticParams::default(), seed)
}

pub fn regression_experiment(p: &RegressionParams, seed: u64) -> Result<ProblemSpec> {
    let net = random_geometric_network(p.agents, p.radius, seed)?.network;
    let noise = Normal::new(0.0, p.noise_variance.sqrt())
        .map_err(|e| crate::Error::InvalidParameter(e.to_string()))?;
    let zeros = (p.zero_fraction * p.dim as f64).round() as usize;
    let mut rng = rng::stream_rng(seed, stream::DATA);
    let mut agents = Vec::with_capacity(p.agents);
    for _ in 0..p.agents {
        let mut truth = gaussian_vector(&mut rng, p.dim);
        let mut idx: Vec<usize> = (0..p.dim).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..zeros.min(p.dim)] {
            truth[i] = 0.0;
        }
        let u = gaussian_matrix(&mut rng, p.samples, p.dim);
        let targets = &u * &truth + DVector::from_fn(p.samples, |_, _| noise.sample(&mut rng));
        agents.push(AgentProblem {
            cost: Cost::LeastSquares(LeastSquares::new(u, targets)?),
            regularizer: Regularizer::L1 { eta: p.l1 },
        });
    }
    let blocks = neighborhood_blocks(&net, &vec![p.dim; p.agents], p.rows, seed)?;
    assemble_problem(net, agents, blocks)
}

pub fn logistic_experiment(p: &LogisticParams, seed: u64) -> Result<ProblemSpec> {
    let net = random_geometric_network(p.agents, p.radius, seed)?.network;
    let mut rng = rng::stream_rng(seed, stream::DATA);
    let positives = p.samples / 2;
    let mut agents = Vec::with_capacity(p.agents);
    for _ in 0..p.agents {
        let labels = DVector::from_fn(p.samples, |t, _| if t < positives { 1.0 } else { -1.0 });
        let features = DMatrix::from_fn(p.samples, p.dim, |t, _| {
            labels[t] + rng.sample::<f64, _>(StandardNormal)
        });
        agents.push(AgentProblem {
            cost: Cost::Logistic(Logistic::new(features, labels, p.l2)?),
            regularizer: Regularizer::L1 { eta: p.l1 },
        });
    }
    let blocks = neighborhood_blocks(&net, &vec![p.dim; p.agents], p.rows, seed)?;
    assemble_problem(net, agents, blocks)
}

/// Two scalar agents, `J_k = ½(w_k − c_k)²` with `c = (1, 3)`, coupled by
/// `w₁ + w₂ = 2`. The solution is `w★ = (0, 2)` with multiplier `1`.
pub fn two_agent_quadratic() -> ProblemSpec {
    let net = Network::new(2, &[(0, 1)]).expect("two agents");
    let agents = [1.0, 3.0]
        .iter()
        .map(|&c| AgentProblem {
            cost: Cost::Quadratic(
                Quadratic::isotropic(1.0, DVector::from_element(1, c)).expect("scalar"),
            ),
            regularizer: Regularizer::Zero,
        })
        .collect();
    let blocks = (0..2)
        .map(|k| ConstraintBlock {
            constraint: 0,
            agent: k,
            matrix: DMatrix::from_element(1, 1, 1.0),
            rhs: DVector::from_element(1, 1.0),
        })
        .collect();
    assemble_problem(net, agents, blocks).expect("valid preset")
}

/// Six nodes supplying three areas. Each node holds a (generation, load)
/// pair per area it serves; every area must balance generation and load.
/// Generation has a quadratic cost, loads are pulled toward their demand,
/// and both are boxed by capacity limits.
pub fn economic_dispatch() -> ProblemSpec {
    let net = Network::new(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)])
        .expect("six nodes");
    let areas: [&[usize]; 3] = [&[0, 1, 2], &[1, 3, 4], &[0, 4, 5]];
    let mut served: Vec<Vec<usize>> = vec![Vec::new(); 6];
    for (e, members) in areas.iter().enumerate() {
        for &k in *members {
            served[k].push(e);
        }
    }
    let mut agents = Vec::new();
    let mut blocks = Vec::new();
    for (k, es) in served.iter().enumerate() {
        let q = 2 * es.len();
        let mut h = DMatrix::zeros(q, q);
        let mut center = DVector::zeros(q);
        let (mut lower, mut upper) = (vec![0.0; q], vec![0.0; q]);
        for (j, &e) in es.iter().enumerate() {
            let unit_cost = 0.5 + 0.25 * ((k + e) % 4) as f64;
            let demand = 1.0 + 0.5 * ((2 * k + e) % 3) as f64;
            h[(2 * j, 2 * j)] = unit_cost;
            h[(2 * j + 1, 2 * j + 1)] = 2.0;
            center[2 * j + 1] = demand;
            upper[2 * j] = 1.0 + 0.5 * (k % 3) as f64;
            lower[2 * j + 1] = 0.5 * demand;
            upper[2 * j + 1] = 1.5 * demand;
            let mut b = DMatrix::zeros(1, q);
            b[(0, 2 * j)] = 1.0;
            b[(0, 2 * j + 1)] = -1.0;
            blocks.push(ConstraintBlock {
                constraint: e,
                agent: k,
                matrix: b,
                rhs: DVector::zeros(1),
            });
        }
        agents.push(AgentProblem {
            cost: Cost::Quadratic(Quadratic::new(h, center).expect("diagonal")),
            regularizer: Regularizer::Box { lower, upper },
        });
    }
    assemble_problem(net, agents, blocks).expect("valid preset")
}

/// Which regularizers [`random_instance`] may draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizerMix {
    Smooth,
    /// Zero or L1, chosen per agent.
    SmoothOrL1,
    /// Any kind, chosen per agent.
    Any,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomInstanceOptions {
    pub min_agents: usize,
    pub max_agents: usize,
    pub regularizers: RegularizerMix,
    /// Size agent dimensions so every `blkcol{B_{e,k}}_{e∈𝓔_k}` can have full row rank.
    pub full_row_rank: bool,
}

impl Default for RandomInstanceOptions {
    fn default() -> Self {
        Self {
            min_agents: 2,
            max_agents: 10,
            regularizers: RegularizerMix::SmoothOrL1,
            full_row_rank: false,
        }
    }
}

/// A random strongly convex quadratic instance with random connected
/// constraint sub-networks. Every right-hand side is generated from a
/// feasible point inside any box regularizer.
pub fn random_instance(seed: u64, opts: &RandomInstanceOptions) -> Result<ProblemSpec> {
    let mut rng = rng::stream_rng(seed, stream::INSTANCE);
    let k_count = rng.random_range(opts.min_agents..=opts.max_agents.max(opts.min_agents));
    let net = random_geometric_network(k_count, 0.6, rng.random())?.network;

    let e_count = rng.random_range(1..=k_count);
    let mut member_sets = Vec::with_capacity(e_count);
    for _ in 0..e_count {
        let target = rng.random_range(1..=k_count.min(4));
        let mut members = vec![rng.random_range(0..k_count)];
        while members.len() < target {
            let frontier: Vec<usize> = members
                .iter()
                .flat_map(|&m| net.neighbors(m))
                .filter(|s| !members.contains(s))
                .collect();
            match frontier.choose(&mut rng) {
                Some(&s) => members.push(s),
                None => break,
            }
        }
        members.sort_unstable();
        member_sets.push(members);
    }
    let rows: Vec<usize> = (0..e_count).map(|_| rng.random_range(1..=3)).collect();

    let dims: Vec<usize> = (0..k_count)
        .map(|k| {
            if opts.full_row_rank {
                let needed: usize = member_sets
                    .iter()
                    .zip(&rows)
                    .filter(|(m, _)| m.contains(&k))
                    .map(|(_, &r)| r)
                    .sum();
                needed.max(1) + rng.random_range(0..=1)
            } else {
                rng.random_range(1..=4)
            }
        })
        .collect();

    let mut agents = Vec::with_capacity(k_count);
    let mut w0 = Vec::with_capacity(k_count);
    for &q in &dims {
        let m = gaussian_matrix(&mut rng, q, q);
        let floor = rng.random_range(0.2..1.0);
        let h = m.tr_mul(&m) / q as f64 + DMatrix::identity(q, q) * floor;
        let h = (&h + h.transpose()) * 0.5;
        let center = gaussian_vector(&mut rng, q) * 2.0;
        let point = DVector::from_fn(q, |_, _| rng.random_range(-1.0..1.0));
        let regularizer = random_regularizer(&mut rng, opts.regularizers, q);
        agents.push(AgentProblem {
            cost: Cost::Quadratic(Quadratic::new(h, center)?),
            regularizer,
        });
        w0.push(point);
    }

    let mut blocks = Vec::new();
    for (e, members) in member_sets.iter().enumerate() {
        for &k in members {
            blocks.push(ConstraintBlock {
                constraint: e,
                agent: k,
                matrix: gaussian_matrix(&mut rng, rows[e], dims[k]),
                rhs: DVector::zeros(rows[e]),
            });
        }
    }
    let blocks = with_feasible_rhs(blocks, &w0)?;
    assemble_problem(net, agents, blocks)
}

fn random_regularizer(rng: &mut ChaCha8Rng, mix: RegularizerMix, q: usize) -> Regularizer {
    let choice = match mix {
        RegularizerMix::Smooth => 0,
        RegularizerMix::SmoothOrL1 => rng.random_range(0..2),
        RegularizerMix::Any => rng.random_range(0..5),
    };
    match choice {
        0 => Regularizer::Zero,
        1 => Regularizer::L1 {
            eta: rng.random_range(0.05..0.6),
        },
        2 => Regularizer::SquaredL2 {
            eta: rng.random_range(0.05..0.6),
        },
        3 => Regularizer::ElasticNet {
            l1: rng.random_range(0.05..0.6),
            l2: rng.random_range(0.05..0.6),
        },
        _ => Regularizer::Box {
            lower: (0..q).map(|_| -1.0 - rng.random_range(0.0..1.0)).collect(),
            upper: (0..q).map(|_| 1.0 + rng.random_range(0.0..1.0)).collect(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::spec::smoothness_params;

    #[test]
    fn regression_preset_shapes() {
        let p = generate_regression_experiment(7).unwrap();
        assert_eq!(p.agent_count(), 20);
        assert_eq!(p.constraint_count(), 20);
        for c in p.constraints() {
            assert_eq!(c.rows, 3);
            for (b, _) in &c.blocks {
                assert_eq!(b.shape(), (3, 10));
            }
        }
        assert!(p.network().is_connected());
        assert_eq!(p, generate_regression_experiment(7).unwrap());
    }

    #[test]
    fn logistic_preset_shapes_and_modulus() {
        let p = generate_logistic_experiment(3).unwrap();
        for c in p.constraints() {
            for (b, _) in &c.blocks {
                assert_eq!(b.shape(), (3, 5));
            }
        }
        assert!(smoothness_params(&p).nu >= 0.1);
        assert_eq!(p, generate_logistic_experiment(3).unwrap());
    }

    #[test]
    fn dispatch_preset_has_three_areas() {
        let p = economic_dispatch();
        assert_eq!(p.agent_count(), 6);
        assert_eq!(p.constraint_count(), 3);
        assert_eq!(p.memberships(4).len(), 2);
    }

    #[test]
    fn random_instances_are_reproducible_and_full_rank_when_asked() {
        let opts = RandomInstanceOptions {
            full_row_rank: true,
            regularizers: RegularizerMix::Smooth,
            ..Default::default()
        };
        for seed in 0..20 {
            let a = random_instance(seed, &opts).unwrap();
            assert_eq!(a, random_instance(seed, &opts).unwrap());
            assert!(a.coupling_full_row_rank());
            assert!(smoothness_params(&a).nu > 0.0);
        }
    }
}
