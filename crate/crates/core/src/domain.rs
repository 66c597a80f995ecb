//! Shared domain types and unit conventions.
//!
//! Energy is carried in joules (`f64`) and reported in kWh, power in watts,
//! time in seconds, carbon intensity in gCO₂/kWh and emissions in gCO₂.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Exact conversion factor between joules and kilowatt-hours.
pub const JOULES_PER_KWH: f64 = 3.6e6;

/// Dense node index within a federation of `K` nodes (`0..K`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

/// Lifecycle phase of one node in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Training,
    Communication,
    Aggregation,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Training, Phase::Communication, Phase::Aggregation];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Training => "training",
            Phase::Communication => "communication",
            Phase::Aggregation => "aggregation",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Phase::Training => 0,
            Phase::Communication => 1,
            Phase::Aggregation => 2,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "training" => Ok(Phase::Training),
            "communication" => Ok(Phase::Communication),
            "aggregation" => Ok(Phase::Aggregation),
            other => Err(format!("unknown phase `{other}`")),
        }
    }
}

/// Declared GPU power draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpuProfile {
    pub power_watts: f64,
}

/// Hardware characteristics driving training and aggregation energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    /// Power usage effectiveness, `>= 1`.
    pub pue: f64,
    pub tdp_watts: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpu: Option<GpuProfile>,
    pub cpu_utilization_train: f64,
    pub cpu_utilization_agg: f64,
}

impl HardwareProfile {
    /// Returns the name of the first violated field, if any.
    pub fn violation(&self) -> Option<(&'static str, String)> {
        if !(self.pue.is_finite() && self.pue >= 1.0) {
            return Some(("pue", format!("must be >= 1, got {}", self.pue)));
        }
        if !(self.tdp_watts.is_finite() && self.tdp_watts > 0.0) {
            return Some(("tdp_watts", format!("must be > 0, got {}", self.tdp_watts)));
        }
        if let Some(gpu) = self.gpu {
            if !(gpu.power_watts.is_finite() && gpu.power_watts > 0.0) {
                return Some((
                    "gpu.power_watts",
                    format!("must be > 0, got {}", gpu.power_watts),
                ));
            }
        }
        if !unit_interval(self.cpu_utilization_train) {
            return Some((
                "cpu_utilization_train",
                format!("must lie in [0, 1], got {}", self.cpu_utilization_train),
            ));
        }
        if !unit_interval(self.cpu_utilization_agg) {
            return Some((
                "cpu_utilization_agg",
                format!("must lie in [0, 1], got {}", self.cpu_utilization_agg),
            ));
        }
        None
    }
}

/// Electricity grid a node draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionProfile {
    pub name: String,
    /// Local grid carbon intensity in gCO₂/kWh.
    pub grid_carbon_intensity: f64,
    /// Share of energy drawn from self-generated renewables.
    pub renewable_ratio: f64,
}

impl RegionProfile {
    pub fn new(name: impl Into<String>, grid_carbon_intensity: f64, renewable_ratio: f64) -> Self {
        Self {
            name: name.into(),
            grid_carbon_intensity,
            renewable_ratio,
        }
    }

    /// Spanish grid, 217.422 gCO₂/kWh.
    pub fn spain() -> Self {
        Self::new("ES", 217.422, 0.0)
    }

    /// Swiss grid, 41.279 gCO₂/kWh.
    pub fn switzerland() -> Self {
        Self::new("CH", 41.279, 0.0)
    }

    /// Built-in regions by label.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "ES" | "es" | "spain" => Some(Self::spain()),
            "CH" | "ch" | "switzerland" => Some(Self::switzerland()),
            _ => None,
        }
    }

    pub fn violation(&self) -> Option<(&'static str, String)> {
        if !(self.grid_carbon_intensity.is_finite() && self.grid_carbon_intensity >= 0.0) {
            return Some((
                "grid_carbon_intensity",
                format!("must be >= 0, got {}", self.grid_carbon_intensity),
            ));
        }
        if !unit_interval(self.renewable_ratio) {
            return Some((
                "renewable_ratio",
                format!("must lie in [0, 1], got {}", self.renewable_ratio),
            ));
        }
        None
    }
}

/// Communication technology a node uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediumKind {
    WiredElectrical,
    OpticalFiber,
    Mobile4G5G,
    WiFi,
    Custom,
}

impl MediumKind {
    pub const BUILTIN: [MediumKind; 4] = [
        MediumKind::WiredElectrical,
        MediumKind::OpticalFiber,
        MediumKind::Mobile4G5G,
        MediumKind::WiFi,
    ];

    /// Short name used in config files.
    pub fn label(self) -> &'static str {
        match self {
            MediumKind::WiredElectrical => "wired",
            MediumKind::OpticalFiber => "optical",
            MediumKind::Mobile4G5G => "mobile",
            MediumKind::WiFi => "wifi",
            MediumKind::Custom => "custom",
        }
    }

    /// Parses a built-in medium name. `custom` is not accepted here because it
    /// needs an explicit energy value.
    pub fn parse_builtin(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wired" | "wired_electrical" | "electrical" => Some(MediumKind::WiredElectrical),
            "optical" | "optical_fiber" | "fiber" => Some(MediumKind::OpticalFiber),
            "mobile" | "mobile_4g5g" | "4g5g" | "4g" | "5g" => Some(MediumKind::Mobile4G5G),
            "wifi" | "wi-fi" => Some(MediumKind::WiFi),
            _ => None,
        }
    }
}

/// Energy per transmitted or received byte for one medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommMedium {
    pub kind: MediumKind,
    /// Joules per byte, `> 0`.
    pub energy_per_byte: f64,
}

impl CommMedium {
    pub const WIRED_J_PER_BYTE: f64 = 8e-11;
    pub const OPTICAL_J_PER_BYTE: f64 = 3.52e-14;
    pub const MOBILE_J_PER_BYTE: f64 = 3.33e-8;
    pub const WIFI_J_PER_BYTE: f64 = 5.51e-4;

    /// Built-in medium with its published per-byte constant. `Custom` has no
    /// constant and yields `None`.
    pub fn builtin(kind: MediumKind) -> Option<Self> {
        let energy_per_byte = match kind {
            MediumKind::WiredElectrical => Self::WIRED_J_PER_BYTE,
            MediumKind::OpticalFiber => Self::OPTICAL_J_PER_BYTE,
            MediumKind::Mobile4G5G => Self::MOBILE_J_PER_BYTE,
            MediumKind::WiFi => Self::WIFI_J_PER_BYTE,
            MediumKind::Custom => return None,
        };
        Some(Self {
            kind,
            energy_per_byte,
        })
    }

    pub fn custom(energy_per_byte: f64) -> Self {
        Self {
            kind: MediumKind::Custom,
            energy_per_byte,
        }
    }

    pub fn wired() -> Self {
        Self::builtin(MediumKind::WiredElectrical).unwrap()
    }
}

/// Looks up a medium by the name used in config files.
pub fn ingest_medium(name: &str) -> Result<CommMedium, UnknownMedium> {
    MediumKind::parse_builtin(name)
        .and_then(CommMedium::builtin)
        .ok_or_else(|| UnknownMedium(name.to_string()))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("unknown communication medium `{0}` (expected wired, optical, mobile or wifi)")]
pub struct UnknownMedium(pub String);

/// Everything the simulator knows about one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProfile {
    pub id: NodeId,
    pub hardware: HardwareProfile,
    pub region: RegionProfile,
    pub medium: CommMedium,
    /// Training throughput in samples per second (modeled clock).
    pub compute_speed: f64,
    /// Aggregation throughput in parameters per second (modeled clock).
    pub agg_speed: f64,
}

impl NodeProfile {
    /// Returns `(field path relative to the node, message)` for the first
    /// violated invariant.
    pub fn violation(&self) -> Option<(String, String)> {
        if let Some((field, msg)) = self.hardware.violation() {
            return Some((format!("hardware.{field}"), msg));
        }
        if let Some((field, msg)) = self.region.violation() {
            return Some((format!("region.{field}"), msg));
        }
        if !(self.medium.energy_per_byte.is_finite() && self.medium.energy_per_byte > 0.0) {
            return Some((
                "medium".into(),
                format!(
                    "energy_per_byte must be > 0, got {}",
                    self.medium.energy_per_byte
                ),
            ));
        }
        if !(self.compute_speed.is_finite() && self.compute_speed > 0.0) {
            return Some((
                "compute_speed".into(),
                format!("must be > 0, got {}", self.compute_speed),
            ));
        }
        if !(self.agg_speed.is_finite() && self.agg_speed > 0.0) {
            return Some((
                "agg_speed".into(),
                format!("must be > 0, got {}", self.agg_speed),
            ));
        }
        None
    }
}

fn unit_interval(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_medium_constants() {
        assert_eq!(ingest_medium("wired").unwrap().energy_per_byte, 8.0e-11);
        assert_eq!(ingest_medium("optical").unwrap().energy_per_byte, 3.52e-14);
        assert_eq!(ingest_medium("mobile").unwrap().energy_per_byte, 3.33e-8);
        assert_eq!(ingest_medium("wifi").unwrap().energy_per_byte, 5.51e-4);
        assert_eq!(
            ingest_medium("token-ring").unwrap_err(),
            UnknownMedium("token-ring".into())
        );
    }

    #[test]
    fn every_builtin_kind_round_trips_through_its_label() {
        for kind in MediumKind::BUILTIN {
            assert_eq!(ingest_medium(kind.label()).unwrap().kind, kind);
        }
        assert!(CommMedium::builtin(MediumKind::Custom).is_none());
    }

    #[test]
    fn region_violations() {
        assert!(RegionProfile::spain().violation().is_none());
        let bad = RegionProfile::new("X", 100.0, 1.2);
        assert_eq!(bad.violation().unwrap().0, "renewable_ratio");
        let bad = RegionProfile::new("X", -1.0, 0.0);
        assert_eq!(bad.violation().unwrap().0, "grid_carbon_intensity");
    }

    #[test]
    fn hardware_violations() {
        let hw = HardwareProfile {
            pue: 0.9,
            tdp_watts: 200.0,
            gpu: None,
            cpu_utilization_train: 1.0,
            cpu_utilization_agg: 0.5,
        };
        assert_eq!(hw.violation().unwrap().0, "pue");
        let hw = HardwareProfile {
            pue: 1.0,
            gpu: Some(GpuProfile { power_watts: 0.0 }),
            ..hw
        };
        assert_eq!(hw.violation().unwrap().0, "gpu.power_watts");
    }
}
