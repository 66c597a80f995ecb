//! Persisted run ledger: one row per (node, round, phase) plus run metadata.
//!
//! Floats are written with 17 significant digits so that export, import and
//! re-export produce byte-identical files in both formats.

use std::fmt;
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::carbon::EmissionRecord;
use crate::config::ScenarioConfig;
use crate::domain::{NodeId, Phase};
use crate::energy::{EnergyRecord, PhaseObservation};
use crate::engine::RunResult;
use crate::selection::VoteTally;

pub const CSV_COLUMNS: [&str; 13] = [
    "node",
    "round",
    "phase",
    "duration_s",
    "bytes_sent",
    "bytes_recv",
    "cpu_j",
    "gpu_j",
    "comm_j",
    "total_j",
    "energy_kwh",
    "effective_ci",
    "gco2",
];

pub const JSON_FORMAT_TAG: &str = "dfl-carbon-ledger";
pub const JSON_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LedgerFormat {
    Csv,
    Json,
}

impl LedgerFormat {
    pub fn extension(self) -> &'static str {
        match self {
            LedgerFormat::Csv => "csv",
            LedgerFormat::Json => "json",
        }
    }

    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(LedgerFormat::Csv),
            "json" => Some(LedgerFormat::Json),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("ledger I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("ledger CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("ledger JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("ledger row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("not a ledger file: {0}")]
    Format(String),
}

/// `f64` that serializes with 17 significant digits.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Exact(pub f64);

impl fmt::Display for Exact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.16e}", self.0)
    }
}

impl Serialize for Exact {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom("non-finite value in ledger"));
        }
        let raw = RawValue::from_string(self.to_string()).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Exact {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = <&RawValue>::deserialize(d)?;
        raw.get().parse().map(Exact).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub node: NodeId,
    pub round: u32,
    pub phase: Phase,
    pub duration_s: Exact,
    pub bytes_sent: u64,
    pub bytes_recv: u64,
    pub cpu_j: Exact,
    pub gpu_j: Exact,
    pub comm_j: Exact,
    pub total_j: Exact,
    pub energy_kwh: Exact,
    pub effective_ci: Exact,
    pub gco2: Exact,
}

impl LedgerRow {
    pub fn join(obs: &PhaseObservation, energy: &EnergyRecord, emission: &EmissionRecord) -> Self {
        debug_assert_eq!(obs.key(), energy.key());
        debug_assert_eq!(obs.key(), emission.key());
        Self {
            node: obs.node,
            round: obs.round,
            phase: obs.phase,
            duration_s: Exact(obs.duration_s),
            bytes_sent: obs.bytes_sent,
            bytes_recv: obs.bytes_recv,
            cpu_j: Exact(energy.cpu_joules),
            gpu_j: Exact(energy.gpu_joules),
            comm_j: Exact(energy.comm_joules),
            total_j: Exact(energy.total_joules),
            energy_kwh: Exact(energy.kwh()),
            effective_ci: Exact(emission.effective_ci),
            gco2: Exact(emission.grams_co2),
        }
    }

    pub fn key(&self) -> (NodeId, u32, Phase) {
        (self.node, self.round, self.phase)
    }

    pub fn energy_record(&self) -> EnergyRecord {
        EnergyRecord {
            node: self.node,
            round: self.round,
            phase: self.phase,
            cpu_joules: self.cpu_j.0,
            gpu_joules: self.gpu_j.0,
            comm_joules: self.comm_j.0,
            total_joules: self.total_j.0,
        }
    }

    pub fn emission_record(&self) -> EmissionRecord {
        EmissionRecord {
            node: self.node,
            round: self.round,
            phase: self.phase,
            grams_co2: self.gco2.0,
            effective_ci: self.effective_ci.0,
        }
    }

    fn csv_fields(&self) -> [String; 13] {
        [
            self.node.to_string(),
            self.round.to_string(),
            self.phase.to_string(),
            self.duration_s.to_string(),
            self.bytes_sent.to_string(),
            self.bytes_recv.to_string(),
            self.cpu_j.to_string(),
            self.gpu_j.to_string(),
            self.comm_j.to_string(),
            self.total_j.to_string(),
            self.energy_kwh.to_string(),
            self.effective_ci.to_string(),
            self.gco2.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRound {
    pub round: u32,
    pub val_loss: Exact,
    pub macro_f1: Exact,
    pub active_nodes: Vec<NodeId>,
    pub directed_sends: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSelection {
    /// Round whose reports produced the tallies; they apply to the next round.
    pub round: u32,
    pub tallies: Vec<VoteTally>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerMeta {
    pub scenario_fingerprint: String,
    pub nodes: usize,
    pub rounds_configured: u32,
    pub seed: u64,
    pub topology: String,
    pub aggregation: String,
    pub selection: String,
    pub model_bytes: u64,
    pub stopped_early_at: Option<u32>,
    pub sa_threshold: Option<Exact>,
    pub adjacency: Vec<Vec<NodeId>>,
}

/// A run ledger. Only `rows` survive a CSV round trip; the rest is JSON-only.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLedger {
    pub meta: Option<LedgerMeta>,
    pub rows: Vec<LedgerRow>,
    pub rounds: Vec<LedgerRound>,
    pub selections: Vec<LedgerSelection>,
    pub flags: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonLedger {
    format: String,
    version: u32,
    ledger_fingerprint: String,
    metadata: Option<LedgerMeta>,
    flags: Vec<String>,
    rounds: Vec<LedgerRound>,
    selections: Vec<LedgerSelection>,
    rows: Vec<LedgerRow>,
}

/// SHA-256 of the canonical scenario JSON (which includes the seed).
pub fn scenario_fingerprint(config: &ScenarioConfig) -> String {
    hex::encode(Sha256::digest(config.to_canonical_json().as_bytes()))
}

impl RunLedger {
    pub fn from_run(result: &RunResult) -> Self {
        let rows = result
            .observations
            .iter()
            .zip(&result.energy)
            .zip(&result.emissions)
            .map(|((o, e), c)| LedgerRow::join(o, e, c))
            .collect();
        let cfg = &result.config;
        Self {
            meta: Some(LedgerMeta {
                scenario_fingerprint: scenario_fingerprint(cfg),
                nodes: cfg.node_count(),
                rounds_configured: cfg.rounds,
                seed: cfg.seed,
                topology: cfg.topology.label(),
                aggregation: cfg.aggregation.label(),
                selection: match cfg.selection {
                    crate::selection::SelectionSpec::None => "none".into(),
                    crate::selection::SelectionSpec::GreenSn => "green_sn".into(),
                },
                model_bytes: result.model_bytes,
                stopped_early_at: result.stopped_early_at,
                sa_threshold: result.sa_threshold.map(Exact),
                adjacency: result
                    .topology
                    .nodes()
                    .map(|n| result.topology.neighbors(n).to_vec())
                    .collect(),
            }),
            rows,
            rounds: result
                .rounds
                .iter()
                .map(|r| LedgerRound {
                    round: r.round,
                    val_loss: Exact(r.val_loss),
                    macro_f1: Exact(r.macro_f1),
                    active_nodes: r.active_nodes.clone(),
                    directed_sends: r.directed_sends,
                })
                .collect(),
            selections: result
                .selections
                .iter()
                .map(|(round, s)| LedgerSelection {
                    round: *round,
                    tallies: s.tallies.clone(),
                })
                .collect(),
            flags: result.flags.clone(),
        }
    }

    /// Node count implied by the rows.
    pub fn node_count(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.node.index() + 1)
            .max()
            .unwrap_or(0)
    }

    /// Rounds executed, implied by the rows.
    pub fn rounds_executed(&self) -> u32 {
        self.rows.iter().map(|r| r.round).max().unwrap_or(0)
    }

    pub fn final_f1(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.macro_f1.0)
    }

    pub fn energy_records(&self) -> Vec<EnergyRecord> {
        self.rows.iter().map(LedgerRow::energy_record).collect()
    }

    pub fn emission_records(&self) -> Vec<EmissionRecord> {
        self.rows.iter().map(LedgerRow::emission_record).collect()
    }

    /// SHA-256 over the rows in canonical order, hashing exact bit patterns.
    /// Independent of export format.
    pub fn fingerprint(&self) -> String {
        let mut rows = self.rows.clone();
        rows.sort_by_key(LedgerRow::key);
        let mut h = Sha256::new();
        for r in &rows {
            h.update(r.node.0.to_le_bytes());
            h.update(r.round.to_le_bytes());
            h.update([r.phase.index() as u8]);
            h.update(r.bytes_sent.to_le_bytes());
            h.update(r.bytes_recv.to_le_bytes());
            for v in [
                r.duration_s,
                r.cpu_j,
                r.gpu_j,
                r.comm_j,
                r.total_j,
                r.energy_kwh,
                r.effective_ci,
                r.gco2,
            ] {
                h.update(v.0.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Checks the three-rows-per-(node, round) invariant.
    pub fn check_complete(&self) -> Result<(), String> {
        let mut seen = std::collections::BTreeMap::<(NodeId, u32), [bool; 3]>::new();
        for r in &self.rows {
            let slot = &mut seen.entry((r.node, r.round)).or_default()[r.phase.index()];
            if *slot {
                return Err(format!(
                    "duplicate row for node {} round {} {}",
                    r.node, r.round, r.phase
                ));
            }
            *slot = true;
        }
        match seen.iter().find(|(_, p)| !p.iter().all(|&x| x)) {
            Some(((n, r), _)) => Err(format!("node {n} round {r} lacks a phase row")),
            None => Ok(()),
        }
    }

    pub fn to_csv(&self) -> Result<String, LedgerError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS)?;
        for r in &self.rows {
            w.write_record(r.csv_fields())?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| LedgerError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("ledger CSV is ASCII"))
    }

    pub fn from_csv(text: &str) -> Result<Self, LedgerError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.iter().ne(CSV_COLUMNS) {
            return Err(LedgerError::Format(format!(
                "expected columns {}",
                CSV_COLUMNS.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let bad = |c: usize| LedgerError::Row {
                row,
                message: format!("bad `{}` value `{}`", CSV_COLUMNS[c], &rec[c]),
            };
            let float = |c: usize| rec[c].parse::<f64>().map(Exact).map_err(|_| bad(c));
            let int = |c: usize| rec[c].parse::<u64>().map_err(|_| bad(c));
            rows.push(LedgerRow {
                node: NodeId(rec[0].parse().map_err(|_| bad(0))?),
                round: rec[1].parse().map_err(|_| bad(1))?,
                phase: rec[2].parse().map_err(|_| bad(2))?,
                duration_s: float(3)?,
                bytes_sent: int(4)?,
                bytes_recv: int(5)?,
                cpu_j: float(6)?,
                gpu_j: float(7)?,
                comm_j: float(8)?,
                total_j: float(9)?,
                energy_kwh: float(10)?,
                effective_ci: float(11)?,
                gco2: float(12)?,
            });
        }
        Ok(Self {
            rows,
            ..Self::default()
        })
    }

    pub fn to_json(&self) -> Result<String, LedgerError> {
        let doc = JsonLedger {
            format: JSON_FORMAT_TAG.into(),
            version: JSON_FORMAT_VERSION,
            ledger_fingerprint: self.fingerprint(),
            metadata: self.meta.clone(),
            flags: self.flags.clone(),
            rounds: self.rounds.clone(),
            selections: self.selections.clone(),
            rows: self.rows.clone(),
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self, LedgerError> {
        let doc: JsonLedger = serde_json::from_str(text)?;
        if doc.format != JSON_FORMAT_TAG || doc.version != JSON_FORMAT_VERSION {
            return Err(LedgerError::Format(format!(
                "{} v{}",
                doc.format, doc.version
            )));
        }
        let ledger = Self {
            meta: doc.metadata,
            rows: doc.rows,
            rounds: doc.rounds,
            selections: doc.selections,
            flags: doc.flags,
        };
        if ledger.fingerprint() != doc.ledger_fingerprint {
            return Err(LedgerError::Format(
                "ledger fingerprint does not match its rows".into(),
            ));
        }
        Ok(ledger)
    }

    pub fn render(&self, format: LedgerFormat) -> Result<String, LedgerError> {
        match format {
            LedgerFormat::Csv => self.to_csv(),
            LedgerFormat::Json => self.to_json(),
        }
    }

    pub fn parse(text: &str, format: LedgerFormat) -> Result<Self, LedgerError> {
        match format {
            LedgerFormat::Csv => Self::from_csv(text),
            LedgerFormat::Json => Self::from_json(text),
        }
    }
}

pub fn export_ledger(
    ledger: &RunLedger,
    format: LedgerFormat,
    path: impl AsRef<Path>,
) -> Result<(), LedgerError> {
    std::fs::write(path, ledger.render(format)?)?;
    Ok(())
}

/// Reads a ledger, choosing the format by extension (JSON otherwise sniffed
/// from a leading `{`).
pub fn import_ledger(path: impl AsRef<Path>) -> Result<RunLedger, LedgerError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let format = LedgerFormat::from_path(path).unwrap_or(if text.trim_start().starts_with('{') {
        LedgerFormat::Json
    } else {
        LedgerFormat::Csv
    });
    RunLedger::parse(&text, format)
}
