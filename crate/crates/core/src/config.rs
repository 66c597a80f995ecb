//! Scenario files: JSON schema, defaults and validation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationSpec, ThresholdSpec};
use crate::domain::{
    ingest_medium, CommMedium, HardwareProfile, MediumKind, NodeId, NodeProfile, RegionProfile,
};
use crate::learning::PartitionSpec;
use crate::registry::{load_profile_registry, RegistryError};
use crate::selection::SelectionSpec;
use crate::topology::{build_topology, TopologySpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_LEARNING_RATE: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Parse(String),
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid value at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("unknown communication medium `{name}` at `{path}`")]
    UnknownMedium { path: String, name: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

impl ConfigError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Field path the error points at, when there is one.
    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Schema { path, .. }
            | ConfigError::Validation { path, .. }
            | ConfigError::UnknownMedium { path, .. } => Some(path),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Modeled,
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopping {
    pub patience: u32,
    pub min_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub classes: usize,
    pub features: usize,
    pub samples_per_node: usize,
    pub partition: PartitionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden_sizes: Vec<usize>,
}

/// A fully validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub nodes: Vec<NodeProfile>,
    pub topology: TopologySpec,
    pub rounds: u32,
    pub local_epochs: u32,
    pub data: DataSpec,
    pub model: ModelSpec,
    pub aggregation: AggregationSpec,
    pub selection: SelectionSpec,
    pub clock: ClockMode,
    pub early_stopping: Option<EarlyStopping>,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Medium as written in a file: a built-in name or `{"custom": joules_per_byte}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MediumSpec {
    Name(String),
    Custom { custom: f64 },
}

impl From<&CommMedium> for MediumSpec {
    fn from(m: &CommMedium) -> Self {
        match m.kind {
            MediumKind::Custom => MediumSpec::Custom {
                custom: m.energy_per_byte,
            },
            kind => MediumSpec::Name(kind.label().to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFile {
    pub id: u32,
    pub hardware: HardwareProfile,
    pub region: RegionProfile,
    pub medium: MediumSpec,
    pub compute_speed: f64,
    pub agg_speed: f64,
}

/// On-disk layout of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<NodeFile>>,
    /// CSV registry path, resolved relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_registry: Option<PathBuf>,
    pub topology: TopologySpec,
    pub rounds: u32,
    pub local_epochs: u32,
    pub data: DataSpec,
    pub model: ModelSpec,
    pub aggregation: AggregationSpec,
    #[serde(default)]
    pub selection: SelectionSpec,
    #[serde(default)]
    pub clock: ClockMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stopping: Option<EarlyStopping>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    pub seed: u64,
}

fn default_lr() -> f64 {
    DEFAULT_LEARNING_RATE
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text, path.parent())
}

/// Parses and validates scenario JSON. `base_dir` resolves a relative
/// `profile_registry` path.
pub fn parse_scenario(text: &str, base_dir: Option<&Path>) -> Result<ScenarioConfig, ConfigError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let file: ScenarioFile = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Schema {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    file.into_config(base_dir)
}

impl ScenarioFile {
    pub fn into_config(self, base_dir: Option<&Path>) -> Result<ScenarioConfig, ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(ConfigError::invalid(
                "schema",
                format!(
                    "unsupported schema version {} (expected {SCHEMA_VERSION})",
                    self.schema
                ),
            ));
        }
        let nodes = match (self.nodes, self.profile_registry) {
            (Some(nodes), None) => nodes
                .into_iter()
                .enumerate()
                .map(|(i, n)| node_from_file(i, n))
                .collect::<Result<Vec<_>, _>>()?,
            (None, Some(reg)) => {
                let reg = match base_dir {
                    Some(dir) if reg.is_relative() => dir.join(reg),
                    _ => reg,
                };
                load_profile_registry(&reg)?.into_values().collect()
            }
            (Some(_), Some(_)) => {
                return Err(ConfigError::invalid(
                    "profile_registry",
                    "give either `nodes` or `profile_registry`, not both",
                ))
            }
            (None, None) => {
                return Err(ConfigError::Schema {
                    path: "nodes".into(),
                    message: "missing field `nodes` (or `profile_registry`)".into(),
                })
            }
        };
        let config = ScenarioConfig {
            nodes,
            topology: self.topology,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            data: self.data,
            model: self.model,
            aggregation: self.aggregation,
            selection: self.selection,
            clock: self.clock,
            early_stopping: self.early_stopping,
            learning_rate: self.learning_rate,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

fn node_from_file(index: usize, n: NodeFile) -> Result<NodeProfile, ConfigError> {
    let medium = match n.medium {
        MediumSpec::Name(name) => ingest_medium(&name).map_err(|_| ConfigError::UnknownMedium {
            path: format!("nodes[{index}].medium"),
            name,
        })?,
        MediumSpec::Custom { custom } => CommMedium::custom(custom),
    };
    Ok(NodeProfile {
        id: NodeId(n.id),
        hardware: n.hardware,
        region: n.region,
        medium,
        compute_speed: n.compute_speed,
        agg_speed: n.agg_speed,
    })
}

impl ScenarioConfig {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Checks every invariant; the error names the first offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let k = self.nodes.len();
        if k < 2 {
            return Err(ConfigError::invalid(
                "nodes",
                format!("need at least 2 nodes, got {k}"),
            ));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.index() != i {
                return Err(ConfigError::invalid(
                    format!("nodes[{i}].id"),
                    format!(
                        "node ids must be 0..{k} in order, found {} at position {i}",
                        node.id
                    ),
                ));
            }
            if let Some((field, msg)) = node.violation() {
                return Err(ConfigError::invalid(format!("nodes[{i}].{field}"), msg));
            }
        }
        match self.topology {
            TopologySpec::ErdosRenyi { p } if !(p > 0.0 && p <= 1.0) => {
                return Err(ConfigError::invalid(
                    "topology.p",
                    format!("must lie in (0, 1], got {p}"),
                ));
            }
            _ => {}
        }
        if self.rounds < 1 {
            return Err(ConfigError::invalid("rounds", "must be >= 1"));
        }
        if self.local_epochs < 1 {
            return Err(ConfigError::invalid("local_epochs", "must be >= 1"));
        }
        let d = &self.data;
        if d.classes < 2 {
            return Err(ConfigError::invalid(
                "data.classes",
                format!("must be >= 2, got {}", d.classes),
            ));
        }
        if d.features < 2 {
            return Err(ConfigError::invalid(
                "data.features",
                format!("must be >= 2, got {}", d.features),
            ));
        }
        if d.samples_per_node < d.classes {
            return Err(ConfigError::invalid(
                "data.samples_per_node",
                format!(
                    "must be >= classes ({}), got {}",
                    d.classes, d.samples_per_node
                ),
            ));
        }
        if let PartitionSpec::Dirichlet { alpha } = d.partition {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(ConfigError::invalid(
                    "data.partition.alpha",
                    format!("must be > 0, got {alpha}"),
                ));
            }
        }
        if let Some(i) = self.model.hidden_sizes.iter().position(|&h| h == 0) {
            return Err(ConfigError::invalid(
                format!("model.hidden_sizes[{i}]"),
                "must be positive",
            ));
        }
        match self.aggregation {
            AggregationSpec::FedAvg => {}
            AggregationSpec::Krum { f } => {
                let topo = build_topology(&self.topology, k, self.seed)
                    .map_err(|e| ConfigError::invalid("topology", e.to_string()))?;
                if let Some(n) = topo.nodes().find(|&n| topo.degree(n) + 1 < 2 * f + 3) {
                    return Err(ConfigError::invalid(
                        "aggregation.f",
                        format!(
                            "krum with f = {f} needs >= {} candidates per node; node {n} has {}",
                            2 * f + 3,
                            topo.degree(n) + 1
                        ),
                    ));
                }
            }
            AggregationSpec::GreenSa { threshold } => match threshold {
                ThresholdSpec::Fixed(c) if !(c.is_finite() && c > 0.0) => {
                    return Err(ConfigError::invalid(
                        "aggregation.threshold.fixed",
                        format!("must be > 0, got {c}"),
                    ));
                }
                ThresholdSpec::Percentile(q) if !(q > 0.0 && q < 100.0) => {
                    return Err(ConfigError::invalid(
                        "aggregation.threshold.percentile",
                        format!("must lie in (0, 100), got {q}"),
                    ));
                }
                _ => {}
            },
        }
        if let Some(es) = self.early_stopping {
            if es.patience < 1 {
                return Err(ConfigError::invalid(
                    "early_stopping.patience",
                    "must be >= 1",
                ));
            }
            if !(es.min_delta.is_finite() && es.min_delta >= 0.0) {
                return Err(ConfigError::invalid(
                    "early_stopping.min_delta",
                    "must be >= 0",
                ));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ConfigError::invalid("learning_rate", "must be > 0"));
        }
        Ok(())
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            schema: SCHEMA_VERSION,
            nodes: Some(
                self.nodes
                    .iter()
                    .map(|n| NodeFile {
                        id: n.id.0,
                        hardware: n.hardware,
                        region: n.region.clone(),
                        medium: MediumSpec::from(&n.medium),
                        compute_speed: n.compute_speed,
                        agg_speed: n.agg_speed,
                    })
                    .collect(),
            ),
            profile_registry: None,
            topology: self.topology,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            data: self.data,
            model: self.model.clone(),
            aggregation: self.aggregation,
            selection: self.selection,
            clock: self.clock,
            early_stopping: self.early_stopping,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }

    /// Compact canonical JSON; used for fingerprints.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("scenario serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scenario serializes")
    }

    pub fn effective_intensities(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .map(|n| crate::carbon::effective_carbon_intensity(&n.region))
            .collect()
    }
}
