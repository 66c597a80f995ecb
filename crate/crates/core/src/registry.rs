//! Node profile registry CSV.
//!
//! ```text
//! node_id,pue,tdp_watts,gpu_power_watts,util_train,util_agg,region,grid_ci,renewable_ratio,medium,compute_speed,agg_speed
//! 0,1.0,200,70,1.0,0.5,ES,217.422,0.0,wired,5000,2e7
//! ```
//!
//! `gpu_power_watts` may be empty for CPU-only nodes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::domain::{
    ingest_medium, GpuProfile, HardwareProfile, NodeId, NodeProfile, RegionProfile,
};

pub const REGISTRY_COLUMNS: [&str; 12] = [
    "node_id",
    "pue",
    "tdp_watts",
    "gpu_power_watts",
    "util_train",
    "util_agg",
    "region",
    "grid_ci",
    "renewable_ratio",
    "medium",
    "compute_speed",
    "agg_speed",
];

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("cannot read registry: {0}")]
    Io(#[from] std::io::Error),
    #[error("registry is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("node {0} appears more than once in the registry")]
    DuplicateNode(u32),
    #[error("registry row {row}: {message}")]
    Validation { row: usize, message: String },
    #[error("registry node ids must be dense 0..{count}; missing {missing}")]
    SparseIds { count: usize, missing: u32 },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
}

pub fn load_profile_registry(
    path: impl AsRef<Path>,
) -> Result<BTreeMap<NodeId, NodeProfile>, RegistryError> {
    let text = std::fs::read_to_string(path)?;
    parse_profile_registry(&text)
}

/// Parses registry CSV text. Row numbers in errors count data rows from 1.
pub fn parse_profile_registry(text: &str) -> Result<BTreeMap<NodeId, NodeProfile>, RegistryError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let mut col = [0usize; 12];
    for (slot, name) in col.iter_mut().zip(REGISTRY_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or(RegistryError::MissingColumn(name))?;
    }
    let mut out = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let cell = |c: usize| record.get(col[c]).unwrap_or("");
        let num = |c: usize| -> Result<f64, RegistryError> {
            cell(c)
                .parse::<f64>()
                .map_err(|_| RegistryError::Validation {
                    row,
                    message: format!("`{}` is not a number: `{}`", REGISTRY_COLUMNS[c], cell(c)),
                })
        };
        let id: u32 = cell(0).parse().map_err(|_| RegistryError::Validation {
            row,
            message: format!("bad node_id `{}`", cell(0)),
        })?;
        let gpu = match cell(3) {
            "" => None,
            _ => Some(GpuProfile {
                power_watts: num(3)?,
            }),
        };
        let medium = ingest_medium(cell(9)).map_err(|e| RegistryError::Validation {
            row,
            message: e.to_string(),
        })?;
        let profile = NodeProfile {
            id: NodeId(id),
            hardware: HardwareProfile {
                pue: num(1)?,
                tdp_watts: num(2)?,
                gpu,
                cpu_utilization_train: num(4)?,
                cpu_utilization_agg: num(5)?,
            },
            region: RegionProfile::new(cell(6), num(7)?, num(8)?),
            medium,
            compute_speed: num(10)?,
            agg_speed: num(11)?,
        };
        if let Some((field, msg)) = profile.violation() {
            return Err(RegistryError::Validation {
                row,
                message: format!("{field} {msg}"),
            });
        }
        if out.insert(NodeId(id), profile).is_some() {
            return Err(RegistryError::DuplicateNode(id));
        }
    }
    for (expected, id) in out.keys().enumerate() {
        if id.index() != expected {
            return Err(RegistryError::SparseIds {
                count: out.len(),
                missing: expected as u32,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carbon::effective_carbon_intensity;

    const HEADER: &str = "node_id,pue,tdp_watts,gpu_power_watts,util_train,util_agg,region,grid_ci,renewable_ratio,medium,compute_speed,agg_speed";

    #[test]
    fn spain_row() {
        let text = format!("{HEADER}\n0,1.0,200,70,1.0,0.5,ES,217.422,0.0,wired,5000,2e7\n");
        let reg = parse_profile_registry(&text).unwrap();
        let p = &reg[&NodeId(0)];
        assert_eq!(p.region.grid_carbon_intensity, 217.422);
        assert_eq!(p.hardware.gpu, Some(GpuProfile { power_watts: 70.0 }));
        assert_eq!(p.agg_speed, 2e7);
    }

    #[test]
    fn switzerland_row_without_gpu() {
        let text = format!("{HEADER}\n0,1.0,200,,1.0,0.5,CH,41.279,0.0,optical,5000,2e7\n");
        let reg = parse_profile_registry(&text).unwrap();
        let p = &reg[&NodeId(0)];
        assert_eq!(p.region.name, "CH");
        assert_eq!(effective_carbon_intensity(&p.region), 41.279);
        assert!(p.hardware.gpu.is_none());
    }

    #[test]
    fn duplicate_node() {
        let row = |id: u32| format!("{id},1.0,200,,1.0,0.5,ES,217.422,0.0,wired,5000,2e7");
        let text = format!("{HEADER}\n{}\n{}\n{}\n", row(3), row(0), row(3));
        assert!(matches!(
            parse_profile_registry(&text),
            Err(RegistryError::DuplicateNode(3))
        ));
    }

    #[test]
    fn missing_column() {
        let text = "node_id,pue\n0,1.0\n";
        assert!(matches!(
            parse_profile_registry(text),
            Err(RegistryError::MissingColumn("tdp_watts"))
        ));
    }

    #[test]
    fn row_validation_carries_row_number() {
        let text = format!(
            "{HEADER}\n0,1.0,200,,1.0,0.5,ES,217.422,0.0,wired,5000,2e7\n1,1.0,200,,1.0,0.5,ES,217.422,1.4,wired,5000,2e7\n"
        );
        match parse_profile_registry(&text) {
            Err(RegistryError::Validation { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("renewable_ratio"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sparse_ids() {
        let text = format!("{HEADER}\n0,1.0,200,,1.0,0.5,ES,217.422,0.0,wired,5000,2e7\n2,1.0,200,,1.0,0.5,ES,217.422,0.0,wired,5000,2e7\n");
        assert!(matches!(
            parse_profile_registry(&text),
            Err(RegistryError::SparseIds { missing: 1, .. })
        ));
    }
}
