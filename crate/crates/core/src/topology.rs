//! Undirected communication graphs over a federation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::NodeId;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologySpec {
    FullyConnected,
    ErdosRenyi { p: f64 },
    Ring,
}

impl TopologySpec {
    pub fn label(&self) -> String {
        match self {
            TopologySpec::FullyConnected => "fully_connected".into(),
            TopologySpec::ErdosRenyi { p } => format!("erdos_renyi(p={p})"),
            TopologySpec::Ring => "ring".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopologyError {
    #[error("a topology needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("edge probability must lie in (0, 1], got {0}")]
    InvalidProbability(f64),
}

/// Immutable undirected neighbor map. Neighbor lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    adjacency: Vec<Vec<NodeId>>,
    /// Chain edges `(i, i+1)` added to connect a sampled Erdős–Rényi graph.
    repair_edges: Vec<(NodeId, NodeId)>,
}

impl Topology {
    /// Builds a graph from an undirected edge list. Duplicate edges and
    /// self-loops are dropped.
    pub fn from_edges(k: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); k];
        for (a, b) in edges {
            if a == b {
                continue;
            }
            adjacency[a].push(NodeId::from(b));
            adjacency[b].push(NodeId::from(a));
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            adjacency,
            repair_edges: Vec::new(),
        }
    }

    /// Path graph `0 - 1 - ... - (k-1)`.
    pub fn line(k: usize) -> Self {
        Self::from_edges(k, (1..k).map(|i| (i - 1, i)))
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node.index()]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.adjacency[node.index()].len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.adjacency.len()).map(NodeId::from)
    }

    pub fn are_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Undirected edges as `(lo, hi)` pairs in ascending order.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, list) in self.adjacency.iter().enumerate() {
            let i = NodeId::from(i);
            out.extend(list.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn repair_edges(&self) -> &[(NodeId, NodeId)] {
        &self.repair_edges
    }

    pub fn is_connected(&self) -> bool {
        let k = self.node_count();
        if k == 0 {
            return true;
        }
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for j in &self.adjacency[n] {
                if !seen[j.index()] {
                    seen[j.index()] = true;
                    stack.push(j.index());
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Builds the topology described by `spec` for `k` nodes.
///
/// Erdős–Rényi graphs visit unordered pairs `(i, j)`, `i < j`, in
/// lexicographic order and keep each with probability `p`. A disconnected
/// sample is repaired by adding chain edges `(i, i+1)` wherever `i` and
/// `i+1` are still in different components, scanning `i` upward.
pub fn build_topology(spec: &TopologySpec, k: usize, seed: u64) -> Result<Topology, TopologyError> {
    if k < 2 {
        return Err(TopologyError::TooFewNodes(k));
    }
    match *spec {
        TopologySpec::FullyConnected => Ok(Topology::from_edges(
            k,
            (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))),
        )),
        TopologySpec::Ring => Ok(Topology::from_edges(k, (0..k).map(|i| (i, (i + 1) % k)))),
        TopologySpec::ErdosRenyi { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(TopologyError::InvalidProbability(p));
            }
            let mut rng = rng::stream(seed, rng::Stream::Topology, k as u64, 0);
            let mut edges = Vec::new();
            for i in 0..k {
                for j in i + 1..k {
                    if rng.random::<f64>() < p {
                        edges.push((i, j));
                    }
                }
            }
            let mut uf = UnionFind::new(k);
            for &(a, b) in &edges {
                uf.union(a, b);
            }
            let mut repair = Vec::new();
            for i in 0..k - 1 {
                if uf.find(i) != uf.find(i + 1) {
                    uf.union(i, i + 1);
                    repair.push((i, i + 1));
                }
            }
            edges.extend(repair.iter().copied());
            let mut topo = Topology::from_edges(k, edges);
            topo.repair_edges = repair
                .into_iter()
                .map(|(a, b)| (NodeId::from(a), NodeId::from(b)))
                .collect();
            Ok(topo)
        }
    }
}

/// Model transmissions per round when every node sends to every neighbor.
pub fn directed_exchanges_per_round(topology: &Topology) -> usize {
    2 * topology.edge_count()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fully_connected_ten() {
        let t = build_topology(&TopologySpec::FullyConnected, 10, 0).unwrap();
        assert_eq!(t.edge_count(), 45);
        assert!(t.nodes().all(|n| t.degree(n) == 9));
        assert_eq!(directed_exchanges_per_round(&t), 90);
    }

    #[test]
    fn ring_ten() {
        let t = build_topology(&TopologySpec::Ring, 10, 0).unwrap();
        assert_eq!(t.edge_count(), 10);
        assert!(t.nodes().all(|n| t.degree(n) == 2));
        assert_eq!(t.neighbors(NodeId(0)), &[NodeId(1), NodeId(9)]);
        assert_eq!(directed_exchanges_per_round(&t), 20);
    }

    #[test]
    fn ring_of_two_is_a_single_edge() {
        let t = build_topology(&TopologySpec::Ring, 2, 0).unwrap();
        assert_eq!(t.edge_count(), 1);
        assert_eq!(t.neighbors(NodeId(0)), &[NodeId(1)]);
        assert_eq!(t.neighbors(NodeId(1)), &[NodeId(0)]);
    }

    #[test]
    fn invalid_specs() {
        assert_eq!(
            build_topology(&TopologySpec::Ring, 1, 0),
            Err(TopologyError::TooFewNodes(1))
        );
        for p in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(
                build_topology(&TopologySpec::ErdosRenyi { p }, 5, 0),
                Err(TopologyError::InvalidProbability(_))
            ));
        }
    }

    #[test]
    fn er_repair_connects_sparse_graphs() {
        let mut repaired = 0;
        for seed in 0..50 {
            let t = build_topology(&TopologySpec::ErdosRenyi { p: 0.05 }, 20, seed).unwrap();
            assert!(t.is_connected());
            for &(a, b) in t.repair_edges() {
                assert_eq!(b.0, a.0 + 1);
                assert!(t.are_adjacent(a, b));
            }
            repaired += usize::from(!t.repair_edges().is_empty());
        }
        assert!(repaired > 0);
    }

    #[test]
    fn er_with_p_one_is_complete() {
        let t = build_topology(&TopologySpec::ErdosRenyi { p: 1.0 }, 7, 3).unwrap();
        assert_eq!(t.edge_count(), 21);
        assert!(t.repair_edges().is_empty());
    }

    #[test]
    fn er_edge_count_matches_binomial() {
        let (k, p) = (12usize, 0.3);
        let pairs = (k * (k - 1) / 2) as f64;
        let seeds = 400u64;
        let mut sampled = 0usize;
        for seed in 0..seeds {
            let t = build_topology(&TopologySpec::ErdosRenyi { p }, k, seed).unwrap();
            // only sampled edges follow the binomial; repairs are extra
            sampled += t.edge_count() - t.repair_edges().len();
        }
        let mean = sampled as f64 / seeds as f64;
        let sd_of_mean = (pairs * p * (1.0 - p) / seeds as f64).sqrt();
        assert!((mean - p * pairs).abs() < 3.0 * sd_of_mean, "mean {mean}");
    }

    fn arb_spec() -> impl Strategy<Value = TopologySpec> {
        prop_oneof![
            Just(TopologySpec::FullyConnected),
            Just(TopologySpec::Ring),
            (0.01f64..=1.0).prop_map(|p| TopologySpec::ErdosRenyi { p }),
        ]
    }

    proptest! {
        #[test]
        fn symmetric_sorted_loop_free_connected(spec in arb_spec(), k in 2usize..30, seed: u64) {
            let t = build_topology(&spec, k, seed).unwrap();
            for i in t.nodes() {
                let ns = t.neighbors(i);
                prop_assert!(ns.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(!ns.contains(&i));
                for &j in ns {
                    prop_assert!(t.are_adjacent(j, i));
                }
            }
            prop_assert!(t.is_connected());
        }

        #[test]
        fn deterministic_per_seed(spec in arb_spec(), k in 2usize..20, seed: u64) {
            prop_assert_eq!(build_topology(&spec, k, seed).unwrap(), build_topology(&spec, k, seed).unwrap());
        }
    }
}
