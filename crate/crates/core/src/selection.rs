//! Carbon-intensity voting that picks next round's trainers.
//!
//! Every node votes for each neighbor whose intensity is at most its own.
//! A node keeps training when at least half of its neighbors voted for it;
//! otherwise it sits out the next round as a relay ("bridge").

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::NodeId;
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSpec {
    #[default]
    None,
    GreenSn,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectionError {
    #[error("no carbon-intensity report from node {0}")]
    MissingReport(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub node: NodeId,
    pub positive_votes: usize,
    pub neighbor_count: usize,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionResult {
    pub training_set: BTreeSet<NodeId>,
    pub bridge_set: BTreeSet<NodeId>,
    pub tallies: Vec<VoteTally>,
}

fn report(ci: &BTreeMap<NodeId, f64>, node: NodeId) -> Result<f64, SelectionError> {
    ci.get(&node)
        .copied()
        .ok_or(SelectionError::MissingReport(node))
}

/// Positive votes received by each node.
pub fn cast_votes(
    topology: &Topology,
    ci: &BTreeMap<NodeId, f64>,
) -> Result<BTreeMap<NodeId, usize>, SelectionError> {
    let mut votes: BTreeMap<NodeId, usize> = topology.nodes().map(|n| (n, 0)).collect();
    for voter in topology.nodes() {
        let own = report(ci, voter)?;
        for &j in topology.neighbors(voter) {
            if report(ci, j)? <= own {
                *votes.get_mut(&j).expect("every node has a counter") += 1;
            }
        }
    }
    Ok(votes)
}

pub fn select_participants(
    topology: &Topology,
    ci: &BTreeMap<NodeId, f64>,
) -> Result<SelectionResult, SelectionError> {
    let votes = cast_votes(topology, ci)?;
    let mut result = SelectionResult::default();
    for node in topology.nodes() {
        let positive_votes = votes[&node];
        let neighbor_count = topology.degree(node);
        let retained = positive_votes as f64 >= neighbor_count as f64 / 2.0;
        if retained {
            result.training_set.insert(node);
        } else {
            result.bridge_set.insert(node);
        }
        result.tallies.push(VoteTally {
            node,
            positive_votes,
            neighbor_count,
            retained,
        });
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_topology, TopologySpec};
    use proptest::prelude::*;

    fn ci(values: &[f64]) -> BTreeMap<NodeId, f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (NodeId::from(i), v))
            .collect()
    }

    fn ids(v: &[u32]) -> BTreeSet<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn five_node_line() {
        // A-B-C-D-E
        let t = Topology::line(5);
        let r = select_participants(&t, &ci(&[150.0, 180.0, 220.0, 260.0, 140.0])).unwrap();
        let got: Vec<(usize, usize, bool)> = r
            .tallies
            .iter()
            .map(|t| (t.positive_votes, t.neighbor_count, t.retained))
            .collect();
        assert_eq!(
            got,
            vec![
                (1, 1, true),
                (1, 2, true),
                (1, 2, true),
                (0, 2, false),
                (1, 1, true)
            ]
        );
        assert_eq!(r.training_set, ids(&[0, 1, 2, 4]));
        assert_eq!(r.bridge_set, ids(&[3]));
    }

    #[test]
    fn equal_intensities_retain_everyone() {
        let t = build_topology(&TopologySpec::ErdosRenyi { p: 0.4 }, 9, 3).unwrap();
        let votes = cast_votes(&t, &ci(&[100.0; 9])).unwrap();
        for n in t.nodes() {
            assert_eq!(votes[&n], t.degree(n));
        }
        let r = select_participants(&t, &ci(&[100.0; 9])).unwrap();
        assert!(r.bridge_set.is_empty());
    }

    #[test]
    fn two_nodes() {
        let t = Topology::line(2);
        let v = cast_votes(&t, &ci(&[10.0, 20.0])).unwrap();
        assert_eq!(v[&NodeId(0)], 1);
        assert_eq!(v[&NodeId(1)], 0);
    }

    #[test]
    fn ring_of_four() {
        let t = build_topology(&TopologySpec::Ring, 4, 0).unwrap();
        let c = ci(&[1.0, 2.0, 3.0, 4.0]);
        // brute force over all 8 directed (voter, target) pairs
        let mut oracle = [0usize; 4];
        for i in 0..4usize {
            for j in [(i + 1) % 4, (i + 3) % 4] {
                if c[&NodeId::from(j)] <= c[&NodeId::from(i)] {
                    oracle[j] += 1;
                }
            }
        }
        assert_eq!(oracle, [2, 1, 1, 0]);
        let r = select_participants(&t, &c).unwrap();
        let votes: Vec<usize> = r.tallies.iter().map(|t| t.positive_votes).collect();
        assert_eq!(votes, oracle.to_vec());
        assert_eq!(r.training_set, ids(&[0, 1, 2]));
        assert_eq!(r.bridge_set, ids(&[3]));
    }

    #[test]
    fn missing_report() {
        let t = Topology::line(3);
        assert_eq!(
            cast_votes(&t, &ci(&[1.0, 2.0])),
            Err(SelectionError::MissingReport(NodeId(2)))
        );
    }

    fn arb_case() -> impl Strategy<Value = (Topology, Vec<f64>)> {
        (2usize..12, any::<u64>(), 0.2f64..1.0).prop_flat_map(|(k, seed, p)| {
            let t = build_topology(&TopologySpec::ErdosRenyi { p }, k, seed).unwrap();
            (
                Just(t),
                proptest::collection::vec(0u32..5, k)
                    .prop_map(|v| v.into_iter().map(|x| 100.0 + 10.0 * x as f64).collect()),
            )
        })
    }

    proptest! {
        #[test]
        fn vote_conservation((t, c) in arb_case()) {
            let votes = cast_votes(&t, &ci(&c)).unwrap();
            let total: usize = votes.values().sum();
            let all_equal = t.edges().iter().all(|(a, b)| c[a.index()] == c[b.index()]);
            prop_assert!(total <= 2 * t.edge_count());
            prop_assert_eq!(total == 2 * t.edge_count(), all_equal);
        }

        #[test]
        fn lowering_own_intensity_never_hurts((t, c) in arb_case(), who in 0usize..12, drop in 1.0f64..50.0) {
            let who = who % c.len();
            let node = NodeId::from(who);
            let before = select_participants(&t, &ci(&c)).unwrap();
            let mut lowered = c.clone();
            lowered[who] -= drop;
            let after = select_participants(&t, &ci(&lowered)).unwrap();
            prop_assert!(after.tallies[who].positive_votes >= before.tallies[who].positive_votes);
            if before.training_set.contains(&node) {
                prop_assert!(after.training_set.contains(&node));
            }
        }

        #[test]
        fn tallies_depend_only_on_neighbors((t, c) in arb_case(), who in 0usize..12, bump in 1.0f64..500.0) {
            let who = who % c.len();
            let node = NodeId::from(who);
            let before = cast_votes(&t, &ci(&c)).unwrap();
            let mut perturbed = c.clone();
            for other in t.nodes() {
                if other != node && !t.are_adjacent(node, other) {
                    perturbed[other.index()] += bump;
                }
            }
            let after = cast_votes(&t, &ci(&perturbed)).unwrap();
            prop_assert_eq!(before[&node], after[&node]);
        }
    }
}
