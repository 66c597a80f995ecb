//! Model aggregation strategies a node applies to its own and received models.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::NodeId;
use crate::learning::ModelParams;

/// A model as seen by the aggregating node.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborUpdate {
    pub from: NodeId,
    pub model: ModelParams,
    pub sample_count: u64,
    /// Sender's total emissions (gCO₂) in the previous round; 0 in round 1.
    pub reported_emissions: f64,
}

/// Emission threshold used by [`green_sa`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSpec {
    /// Fixed threshold in gCO₂.
    Fixed(f64),
    /// Nearest-rank percentile of the per-node emissions observed in round 1.
    Percentile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregationSpec {
    #[serde(rename = "fedavg")]
    FedAvg,
    Krum {
        f: usize,
    },
    GreenSa {
        threshold: ThresholdSpec,
    },
}

impl AggregationSpec {
    pub fn label(&self) -> String {
        match self {
            AggregationSpec::FedAvg => "fedavg".into(),
            AggregationSpec::Krum { f } => format!("krum(f={f})"),
            AggregationSpec::GreenSa {
                threshold: ThresholdSpec::Fixed(c),
            } => {
                format!("green_sa(c={c})")
            }
            AggregationSpec::GreenSa {
                threshold: ThresholdSpec::Percentile(q),
            } => {
                format!("green_sa(p{q})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregationError {
    #[error("model from node {0} does not match the federation architecture")]
    ShapeMismatch(NodeId),
    #[error("krum needs at least {needed} candidates for f = {f}, got {got}")]
    TooFewUpdates { needed: usize, got: usize, f: usize },
    #[error("percentile threshold needs at least one emission value")]
    EmptyInput,
    #[error("percentile must lie in (0, 100), got {0}")]
    InvalidPercentile(f64),
    #[error("emission threshold must be > 0, got {0}")]
    InvalidThreshold(f64),
}

/// Own update plus received ones in ascending `NodeId` order.
fn candidates<'a>(
    own: &'a NeighborUpdate,
    received: &'a [NeighborUpdate],
) -> Result<Vec<&'a NeighborUpdate>, AggregationError> {
    let mut all: Vec<&NeighborUpdate> = std::iter::once(own).chain(received).collect();
    for u in &all {
        if !u.model.same_shape(&own.model) {
            return Err(AggregationError::ShapeMismatch(u.from));
        }
    }
    all.sort_by_key(|u| u.from);
    Ok(all)
}

/// Sample-count-weighted mean. Weights are normalised over `updates`.
fn weighted_mean(updates: &[&NeighborUpdate]) -> ModelParams {
    let total: f64 = updates.iter().map(|u| u.sample_count as f64).sum();
    let template = &updates[0].model;
    let mut acc = vec![0.0f64; template.param_count()];
    for u in updates {
        let w = u.sample_count as f64 / total;
        for (a, &v) in acc.iter_mut().zip(u.model.values()) {
            *a += w * f64::from(v);
        }
    }
    ModelParams::new(
        template.layers().to_vec(),
        acc.into_iter().map(|v| v as f32).collect(),
    )
    .expect("mean of valid models is a valid model")
}

/// FedAvg over the own update and every received update.
pub fn fedavg(
    own: &NeighborUpdate,
    received: &[NeighborUpdate],
) -> Result<ModelParams, AggregationError> {
    let all = candidates(own, received)?;
    if all.len() == 1 {
        return Ok(own.model.clone());
    }
    Ok(weighted_mean(&all))
}

/// Krum: returns the candidate whose summed squared distance to its
/// `m - f - 2` nearest other candidates is smallest; ties go to the lowest id.
pub fn krum(
    own: &NeighborUpdate,
    received: &[NeighborUpdate],
    f: usize,
) -> Result<ModelParams, AggregationError> {
    let all = candidates(own, received)?;
    let m = all.len();
    if m < 2 * f + 3 {
        return Err(AggregationError::TooFewUpdates {
            needed: 2 * f + 3,
            got: m,
            f,
        });
    }
    let mut dist = vec![vec![0.0f64; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let d = all[i].model.squared_distance(&all[j].model);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let nearest = m - f - 2;
    let mut best: Option<(f64, usize)> = None;
    for (i, row) in dist.iter().enumerate() {
        let mut others: Vec<f64> = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &d)| d)
            .collect();
        others.sort_by(f64::total_cmp);
        let score: f64 = others[..nearest].iter().sum();
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, i));
        }
    }
    let (_, winner) = best.expect("m >= 3");
    Ok(all[winner].model.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreenSaOutcome {
    pub model: ModelParams,
    /// Neighbors whose reported emissions were at or below the threshold.
    pub selected: BTreeSet<NodeId>,
}

/// Emission-threshold aggregation: neighbors reporting at most `c_thresh`
/// gCO₂ are averaged together with the node's own update, weighted by sample
/// count. With no qualifying neighbor the own model is returned unchanged.
pub fn green_sa(
    own: &NeighborUpdate,
    received: &[NeighborUpdate],
    c_thresh: f64,
) -> Result<GreenSaOutcome, AggregationError> {
    if c_thresh.is_nan() || c_thresh <= 0.0 {
        return Err(AggregationError::InvalidThreshold(c_thresh));
    }
    let kept: Vec<NeighborUpdate> = received
        .iter()
        .filter(|u| u.reported_emissions <= c_thresh)
        .cloned()
        .collect();
    let selected = kept.iter().map(|u| u.from).collect();
    Ok(GreenSaOutcome {
        model: fedavg(own, &kept)?,
        selected,
    })
}

/// Nearest-rank percentile: the value at index `ceil(q/100 · n) - 1` of the
/// ascending sort.
pub fn percentile_threshold(emissions: &[f64], q: f64) -> Result<f64, AggregationError> {
    if emissions.is_empty() {
        return Err(AggregationError::EmptyInput);
    }
    if !(q > 0.0 && q < 100.0) {
        return Err(AggregationError::InvalidPercentile(q));
    }
    let mut sorted = emissions.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q / 100.0 * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Parameter operations an aggregation performs, used by the modeled clock.
///
/// Averaging touches every parameter of every averaged model once. Krum
/// computes all pairwise distances and then copies the winner.
pub fn aggregation_work(spec: &AggregationSpec, models_considered: usize, params: usize) -> u64 {
    let m = models_considered as u64;
    let p = params as u64;
    match spec {
        AggregationSpec::FedAvg | AggregationSpec::GreenSa { .. } => {
            if m <= 1 {
                0
            } else {
                m * p
            }
        }
        AggregationSpec::Krum { .. } => m * (m.saturating_sub(1)) / 2 * p + p,
    }
}
