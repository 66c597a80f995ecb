//! Effective carbon intensity and emissions per energy record.

use serde::{Deserialize, Serialize};

use crate::domain::{NodeId, Phase, RegionProfile, JOULES_PER_KWH};
use crate::energy::{canonical_order, EnergyRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionRecord {
    pub node: NodeId,
    pub round: u32,
    pub phase: Phase,
    pub grams_co2: f64,
    /// gCO₂/kWh applied to this record.
    pub effective_ci: f64,
}

impl EmissionRecord {
    pub fn key(&self) -> (NodeId, u32, Phase) {
        (self.node, self.round, self.phase)
    }
}

/// Grid intensity scaled by the non-renewable share; renewables count as zero.
pub fn effective_carbon_intensity(region: &RegionProfile) -> f64 {
    region.grid_carbon_intensity * (1.0 - region.renewable_ratio)
}

pub fn emissions(record: &EnergyRecord, region: &RegionProfile) -> EmissionRecord {
    let effective_ci = effective_carbon_intensity(region);
    EmissionRecord {
        node: record.node,
        round: record.round,
        phase: record.phase,
        grams_co2: (record.total_joules / JOULES_PER_KWH) * effective_ci,
        effective_ci,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmissionTotals {
    pub per_node: Vec<f64>,
    /// Indexed by [`Phase::index`].
    pub per_phase: [f64; 3],
    pub total: f64,
}

impl EmissionTotals {
    pub fn phase(&self, phase: Phase) -> f64 {
        self.per_phase[phase.index()]
    }
}

/// Sums emissions in (node, round, phase) order. `per_node` has one entry
/// per node id up to the largest id seen.
pub fn total_emissions(records: &[EmissionRecord]) -> EmissionTotals {
    let node_count = records
        .iter()
        .map(|r| r.node.index() + 1)
        .max()
        .unwrap_or(0);
    let mut per_node = vec![0.0; node_count];
    let mut per_phase = [0.0; 3];
    let mut total = 0.0;
    for r in canonical_order(records, EmissionRecord::key) {
        per_node[r.node.index()] += r.grams_co2;
        per_phase[r.phase.index()] += r.grams_co2;
        total += r.grams_co2;
    }
    EmissionTotals {
        per_node,
        per_phase,
        total,
    }
}
