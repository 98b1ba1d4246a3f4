//! Agent graph and the sub-networks that carry each coupling constraint.
//!
//! Agents are indexed `0..K` in this API. Neighborhoods always contain the
//! agent itself; self-loops are never stored as edges. A [`SubNetwork`] lists
//! its members in strictly increasing order, which fixes the block layout of
//! every stacked dual vector downstream.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Number of resamples `random_geometric_network` attempts before giving up.
pub const GEOMETRIC_RETRY_BUDGET: usize = 100;

/// An undirected graph over `K` agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    adjacency: Vec<BTreeSet<usize>>,
}

impl Network {
    /// Builds the symmetric closure of `edges`. Duplicate edges and
    /// self-loops are dropped.
    pub fn new(agents: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if agents == 0 {
            return Err(Error::InvalidParameter(
                "a network needs at least one agent".into(),
            ));
        }
        let mut adjacency = vec![BTreeSet::new(); agents];
        for &(i, j) in edges {
            for k in [i, j] {
                if k >= agents {
                    return Err(Error::AgentOutOfRange { agent: k, agents });
                }
            }
            if i != j {
                adjacency[i].insert(j);
                adjacency[j].insert(i);
            }
        }
        Ok(Self { adjacency })
    }

    pub fn agents(&self) -> usize {
        self.adjacency.len()
    }

    /// Neighbors of `k`, excluding `k`, ascending.
    pub fn neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[k].iter().copied()
    }

    pub fn degree(&self, k: usize) -> usize {
        self.adjacency[k].len()
    }

    /// The neighborhood 𝓝_k: `k` together with its neighbors, ascending.
    pub fn neighborhood(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.adjacency[k].iter().copied().collect();
        let at = out.partition_point(|&s| s < k);
        out.insert(at, k);
        out
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency.get(i).is_some_and(|n| n.contains(&j))
    }

    /// Edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            out.extend(nbrs.range(i + 1..).map(|&j| (i, j)));
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn is_connected(&self) -> bool {
        let all: Vec<usize> = (0..self.agents()).collect();
        self.connects(&all)
    }

    /// Whether the sub-graph induced by `members` is connected. Members must
    /// be sorted; an empty set is reported as disconnected.
    pub fn connects(&self, members: &[usize]) -> bool {
        let Some(&start) = members.first() else {
            return false;
        };
        let inside = |k: &usize| members.binary_search(k).is_ok();
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(k) = queue.pop_front() {
            for s in self.neighbors(k).filter(inside) {
                if seen.insert(s) {
                    queue.push_back(s);
                }
            }
        }
        seen.len() == members.len()
    }
}

/// A geometric network together with the sampled agent positions.
#[derive(Debug, Clone)]
pub struct GeometricNetwork {
    pub network: Network,
    pub positions: Vec<[f64; 2]>,
    /// Samples drawn before a connected graph appeared (1 = first try).
    pub attempts: usize,
}

/// Samples agents uniformly in the unit square and links pairs at Euclidean
/// distance `<= radius`, resampling until the network is connected.
pub fn random_geometric_network(agents: usize, radius: f64, seed: u64) -> Result<GeometricNetwork> {
    if agents == 0 {
        return Err(Error::InvalidParameter(
            "a network needs at least one agent".into(),
        ));
    }
    if !(radius > 0.0 && radius <= std::f64::consts::SQRT_2) {
        return Err(Error::InvalidParameter(format!(
            "geometric radius must lie in (0, √2], got {radius}"
        )));
    }
    let base = rng::derive_seed(seed, rng::stream::TOPOLOGY);
    for attempt in 0..GEOMETRIC_RETRY_BUDGET {
        let mut rng = rng::stream_rng(base.wrapping_add(attempt as u64), rng::stream::TOPOLOGY);
        let positions: Vec<[f64; 2]> = (0..agents)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let network = geometric_edges(&positions, radius)?;
        if network.is_connected() {
            return Ok(GeometricNetwork {
                network,
                positions,
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::ConnectivityNotAchieved {
        agents,
        radius,
        attempts: GEOMETRIC_RETRY_BUDGET,
    })
}

/// Links every pair of positions at distance `<= radius`.
pub fn geometric_edges(positions: &[[f64; 2]], radius: f64) -> Result<Network> {
    let mut edges = Vec::new();
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            let dx = positions[i][0] - positions[j][0];
            let dy = positions[i][1] - positions[j][1];
            if (dx * dx + dy * dy).sqrt() <= radius {
                edges.push((i, j));
            }
        }
    }
    Network::new(positions.len(), &edges)
}

/// The connected set of agents 𝓒_e that shares constraint `e`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubNetwork {
    constraint: usize,
    members: Vec<usize>,
    /// Per member position: positions of induced neighbors (excluding self).
    local_neighbors: Vec<Vec<usize>>,
}

impl SubNetwork {
    pub fn constraint(&self) -> usize {
        self.constraint
    }

    /// Members in ascending agent order.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Position of `agent` in the member list.
    pub fn position(&self, agent: usize) -> Option<usize> {
        self.members.binary_search(&agent).ok()
    }

    /// Positions of the induced neighbors of the member at `pos`.
    pub fn local_neighbors(&self, pos: usize) -> &[usize] {
        &self.local_neighbors[pos]
    }

    /// Degree of the member at `pos` inside the induced sub-graph.
    pub fn local_degree(&self, pos: usize) -> usize {
        self.local_neighbors[pos].len()
    }

    /// Induced edges in agent ids, `(i, j)` with `i < j`.
    pub fn induced_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (p, nbrs) in self.local_neighbors.iter().enumerate() {
            out.extend(
                nbrs.iter()
                    .filter(|&&q| q > p)
                    .map(|&q| (self.members[p], self.members[q])),
            );
        }
        out
    }
}

/// Induces the sub-network over `members` and checks that it is connected.
pub fn induced_subnetwork(
    net: &Network,
    members: &[usize],
    constraint: usize,
) -> Result<SubNetwork> {
    if members.is_empty() {
        return Err(Error::EmptyConstraint(constraint));
    }
    let mut sorted: Vec<usize> = members.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|&&k| k >= net.agents()) {
        return Err(Error::AgentOutOfRange {
            agent: bad,
            agents: net.agents(),
        });
    }
    if !net.connects(&sorted) {
        return Err(Error::DisconnectedSubnetwork {
            constraint,
            members: sorted,
        });
    }
    let local_neighbors = sorted
        .iter()
        .map(|&k| {
            net.neighbors(k)
                .filter_map(|s| sorted.binary_search(&s).ok())
                .collect()
        })
        .collect();
    Ok(SubNetwork {
        constraint,
        members: sorted,
        local_neighbors,
    })
}

/// One sub-network per agent, 𝓒_e = 𝓝_e.
pub fn neighborhood_subnetworks(net: &Network) -> Vec<SubNetwork> {
    (0..net.agents())
        .map(|e| {
            induced_subnetwork(net, &net.neighborhood(e), e)
                .expect("a neighborhood is a star through its center")
        })
        .collect()
}

/// JSON form of a topology. Agent ids are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub agents: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
}

impl TopologyConfig {
    pub fn from_network(net: &Network, positions: Option<&[[f64; 2]]>) -> Self {
        Self {
            agents: net.agents(),
            edges: net
                .edges()
                .into_iter()
                .map(|(i, j)| [i + 1, j + 1])
                .collect(),
            positions: positions.map(<[_]>::to_vec),
        }
    }

    pub fn to_network(&self) -> Result<Network> {
        let mut edges = Vec::with_capacity(self.edges.len());
        for &[i, j] in &self.edges {
            for k in [i, j] {
                if k == 0 || k > self.agents {
                    return Err(Error::AgentOutOfRange {
                        agent: k,
                        agents: self.agents,
                    });
                }
            }
            edges.push((i - 1, j - 1));
        }
        if let Some(pos) = &self.positions {
            if pos.len() != self.agents {
                return Err(Error::DimensionMismatch(format!(
                    "{} positions for {} agents",
                    pos.len(),
                    self.agents
                )));
            }
        }
        Network::new(self.agents, &edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain BFS over an explicit edge list; independent of `Network`.
    fn bfs_connected(members: &[usize], edges: &[(usize, usize)]) -> bool {
        if members.is_empty() {
            return false;
        }
        let mut seen = vec![members[0]];
        let mut frontier = vec![members[0]];
        while let Some(k) = frontier.pop() {
            for &(i, j) in edges {
                for (a, b) in [(i, j), (j, i)] {
                    if a == k && members.contains(&b) && !seen.contains(&b) {
                        seen.push(b);
                        frontier.push(b);
                    }
                }
            }
        }
        seen.len() == members.len()
    }

    #[test]
    fn single_agent_network() {
        let net = Network::new(1, &[]).unwrap();
        assert_eq!(net.neighborhood(0), vec![0]);
        assert!(net.is_connected());
    }

    #[test]
    fn path_graph_neighborhoods_from_one_based_config() {
        let cfg = TopologyConfig {
            agents: 3,
            edges: vec![[1, 2], [2, 3]],
            positions: None,
        };
        let net = cfg.to_network().unwrap();
        assert_eq!(net.neighborhood(1), vec![0, 1, 2]);
        assert_eq!(net.neighborhood(0), vec![0, 1]);
        assert_eq!(TopologyConfig::from_network(&net, None), cfg);
    }

    #[test]
    fn endpoints_are_range_checked() {
        assert!(matches!(
            Network::new(3, &[(0, 3)]),
            Err(Error::AgentOutOfRange {
                agent: 3,
                agents: 3
            })
        ));
        let cfg = TopologyConfig {
            agents: 2,
            edges: vec![[0, 1]],
            positions: None,
        };
        assert!(cfg.to_network().is_err());
    }

    #[test]
    fn duplicates_and_self_loops_are_dropped() {
        let net = Network::new(3, &[(0, 1), (1, 0), (0, 1), (2, 2)]).unwrap();
        assert_eq!(net.edges(), vec![(0, 1)]);
        assert_eq!(net.degree(2), 0);
        assert!(!net.has_edge(2, 2));
    }

    #[test]
    fn geometric_trivial_cases() {
        let one = random_geometric_network(1, 0.1, 3).unwrap();
        assert_eq!(one.network.edge_count(), 0);
        for seed in 0..20 {
            let two = random_geometric_network(2, std::f64::consts::SQRT_2, seed).unwrap();
            assert_eq!(two.network.edges(), vec![(0, 1)]);
            assert_eq!(two.attempts, 1);
        }
        assert!(random_geometric_network(3, 0.0, 1).is_err());
        assert!(random_geometric_network(3, 1.5, 1).is_err());
    }

    #[test]
    fn geometric_twenty_agents_is_connected_and_reproducible() {
        let a = random_geometric_network(20, 0.3, 11).unwrap();
        let b = random_geometric_network(20, 0.3, 11).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.positions, b.positions);
        let all: Vec<usize> = (0..20).collect();
        assert!(bfs_connected(&all, &a.network.edges()));
        for (i, j) in a.network.edges() {
            let d = ((a.positions[i][0] - a.positions[j][0]).powi(2)
                + (a.positions[i][1] - a.positions[j][1]).powi(2))
            .sqrt();
            assert!(d <= 0.3);
        }
    }

    #[test]
    fn geometric_gives_up_when_connectivity_is_hopeless() {
        assert!(matches!(
            random_geometric_network(30, 0.01, 5),
            Err(Error::ConnectivityNotAchieved { attempts: 100, .. })
        ));
    }

    #[test]
    fn induced_subnetwork_cases() {
        let net = Network::new(3, &[(0, 1), (1, 2)]).unwrap();
        let single = induced_subnetwork(&net, &[2], 0).unwrap();
        assert_eq!(single.size(), 1);
        assert_eq!(single.local_degree(0), 0);
        assert!(matches!(
            induced_subnetwork(&net, &[0, 2], 4),
            Err(Error::DisconnectedSubnetwork { constraint: 4, .. })
        ));
        let sub = induced_subnetwork(&net, &[2, 1, 0], 1).unwrap();
        assert_eq!(sub.members(), &[0, 1, 2]);
        assert_eq!(sub.induced_edges(), vec![(0, 1), (1, 2)]);
        assert!(matches!(
            induced_subnetwork(&net, &[], 0),
            Err(Error::EmptyConstraint(0))
        ));
    }

    #[test]
    fn star_center_covers_everyone() {
        let net = Network::new(5, &[(2, 0), (2, 1), (2, 3), (2, 4)]).unwrap();
        let subs = neighborhood_subnetworks(&net);
        assert_eq!(subs[2].members(), &[0, 1, 2, 3, 4]);
        assert_eq!(subs[0].members(), &[0, 2]);
        let lone = neighborhood_subnetworks(&Network::new(1, &[]).unwrap());
        assert_eq!(lone.len(), 1);
        assert_eq!(lone[0].members(), &[0]);
    }

    proptest! {
        #[test]
        fn neighborhood_subnetworks_are_connected(seed in 0u64..500, radius in 0.4f64..0.7) {
            let geo = random_geometric_network(12, radius, seed).unwrap();
            let edges = geo.network.edges();
            let subs = neighborhood_subnetworks(&geo.network);
            prop_assert_eq!(subs.len(), 12);
            for (e, sub) in subs.iter().enumerate() {
                prop_assert!(bfs_connected(sub.members(), &edges));
                let hood = geo.network.neighborhood(e);
                prop_assert_eq!(sub.members(), hood.as_slice());
                for (i, j) in sub.induced_edges() {
                    prop_assert!(geo.network.has_edge(i, j));
                }
            }
        }
    }
}
