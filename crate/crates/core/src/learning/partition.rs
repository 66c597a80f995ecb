use rand::seq::SliceRandom;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{Dataset, LearningError};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionSpec {
    Iid,
    Dirichlet { alpha: f64 },
}

/// Per-node index lists into a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
    /// Nodes that came out of Dirichlet sampling empty and were given one
    /// sample taken from the then-largest shard.
    pub repaired_nodes: Vec<usize>,
}

impl Partition {
    pub fn shard_sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }
}

pub fn partition(
    data: &Dataset,
    k: usize,
    strategy: &PartitionSpec,
    seed: u64,
) -> Result<Partition, LearningError> {
    if k < 2 {
        return Err(LearningError::InvalidArgs(format!(
            "need k >= 2 nodes, got {k}"
        )));
    }
    if data.len() < k {
        return Err(LearningError::InvalidArgs(format!(
            "{} samples cannot give each of {k} nodes a nonempty shard",
            data.len()
        )));
    }
    let mut rng = rng::stream(seed, rng::Stream::Partition, k as u64, 0);
    match *strategy {
        PartitionSpec::Iid => {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng);
            let base = order.len() / k;
            let extra = order.len() % k;
            let mut shards = Vec::with_capacity(k);
            let mut start = 0;
            for node in 0..k {
                let len = base + usize::from(node < extra);
                shards.push(order[start..start + len].to_vec());
                start += len;
            }
            Ok(Partition {
                shards,
                repaired_nodes: Vec::new(),
            })
        }
        PartitionSpec::Dirichlet { alpha } => {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(LearningError::InvalidArgs(format!(
                    "Dirichlet alpha must be > 0, got {alpha}"
                )));
            }
            let gamma = Gamma::new(alpha, 1.0)
                .map_err(|e| LearningError::InvalidArgs(format!("alpha {alpha}: {e}")))?;
            let mut shards = vec![Vec::new(); k];
            for class in 0..data.num_classes() {
                let members: Vec<usize> = (0..data.len())
                    .filter(|&i| data.label(i) == class)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let draws: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
                let weights = if draws.iter().sum::<f64>() > 0.0 {
                    draws
                } else {
                    // every gamma draw underflowed; fall back to one uniformly chosen node
                    let mut w = vec![0.0; k];
                    w[(rand::Rng::random::<u64>(&mut rng) % k as u64) as usize] = 1.0;
                    w
                };
                let pick = WeightedIndex::new(&weights)
                    .map_err(|e| LearningError::InvalidArgs(format!("class {class}: {e}")))?;
                for i in members {
                    shards[pick.sample(&mut rng)].push(i);
                }
            }
            let mut repaired_nodes = Vec::new();
            for node in 0..k {
                if shards[node].is_empty() {
                    let largest = (0..k)
                        .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
                        .expect("k >= 2");
                    let moved = shards[largest].pop().expect("largest shard is nonempty");
                    shards[node].push(moved);
                    repaired_nodes.push(node);
                }
            }
            Ok(Partition {
                shards,
                repaired_nodes,
            })
        }
    }
}

/// Shannon entropy (nats) of the label histogram of one shard.
pub fn label_entropy(data: &Dataset, shard: &[usize]) -> f64 {
    let mut counts = vec![0usize; data.num_classes()];
    for &i in shard {
        counts[data.label(i)] += 1;
    }
    let n = shard.len() as f64;
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::generate_dataset;
    use proptest::prelude::*;

    #[test]
    fn iid_equal_split() {
        let d = generate_dataset(4, 2, 100, 0).unwrap();
        let p = partition(&d, 10, &PartitionSpec::Iid, 3).unwrap();
        assert_eq!(p.shard_sizes(), vec![10; 10]);
    }

    #[test]
    fn iid_remainder_to_low_ids() {
        let d = generate_dataset(2, 2, 23, 0).unwrap();
        let p = partition(&d, 5, &PartitionSpec::Iid, 3).unwrap();
        assert_eq!(p.shard_sizes(), vec![5, 5, 5, 4, 4]);
    }

    #[test]
    fn huge_alpha_tracks_global_histogram() {
        let d = generate_dataset(4, 2, 8000, 1).unwrap();
        let global: Vec<f64> = d
            .class_counts()
            .iter()
            .map(|&c| c as f64 / d.len() as f64)
            .collect();
        let p = partition(&d, 4, &PartitionSpec::Dirichlet { alpha: 1e6 }, 9).unwrap();
        for shard in &p.shards {
            let mut hist = [0usize; 4];
            for &i in shard {
                hist[d.label(i)] += 1;
            }
            for (c, &g) in hist.iter().zip(&global) {
                let frac = *c as f64 / shard.len() as f64;
                assert!((frac - g).abs() <= 0.05 * g, "{frac} vs {g}");
            }
        }
    }

    #[test]
    fn small_alpha_skews_labels() {
        // entropy of sampled partitions, averaged over 20 seeds
        let d = generate_dataset(10, 2, 5000, 2).unwrap();
        let mean_entropy = |spec: PartitionSpec| {
            let mut total = 0.0;
            for seed in 0..20 {
                let p = partition(&d, 10, &spec, seed).unwrap();
                total += p.shards.iter().map(|s| label_entropy(&d, s)).sum::<f64>() / 10.0;
            }
            total / 20.0
        };
        let skewed = mean_entropy(PartitionSpec::Dirichlet { alpha: 0.1 });
        let iid = mean_entropy(PartitionSpec::Iid);
        assert!(skewed < 0.5 * iid, "{skewed} vs {iid}");
    }

    #[test]
    fn empty_nodes_are_repaired() {
        let d = generate_dataset(2, 2, 12, 0).unwrap();
        let mut saw_repair = false;
        for seed in 0..50 {
            let p = partition(&d, 10, &PartitionSpec::Dirichlet { alpha: 0.1 }, seed).unwrap();
            assert!(p.shards.iter().all(|s| !s.is_empty()));
            saw_repair |= !p.repaired_nodes.is_empty();
        }
        assert!(saw_repair);
    }

    #[test]
    fn invalid_args() {
        let d = generate_dataset(2, 2, 4, 0).unwrap();
        assert!(partition(&d, 1, &PartitionSpec::Iid, 0).is_err());
        assert!(partition(&d, 5, &PartitionSpec::Iid, 0).is_err());
        assert!(partition(&d, 2, &PartitionSpec::Dirichlet { alpha: 0.0 }, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn disjoint_and_covering(
            n in 20usize..200,
            k in 2usize..12,
            alpha in prop_oneof![Just(None), (0.05f64..10.0).prop_map(Some)],
            seed: u64,
        ) {
            let d = generate_dataset(3, 2, n, 1).unwrap();
            let spec = match alpha {
                None => PartitionSpec::Iid,
                Some(alpha) => PartitionSpec::Dirichlet { alpha },
            };
            let p = partition(&d, k, &spec, seed).unwrap();
            let mut all: Vec<usize> = p.shards.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(p.shards.iter().all(|s| !s.is_empty()));
        }
    }
}
