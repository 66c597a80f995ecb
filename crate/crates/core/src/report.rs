//! Summary tables: carbon emissions (CE, gCO₂) and energy consumption (EC,
//! kWh) per phase, totals and final macro-F1.

use std::fmt::Write as _;

use serde::Serialize;

use crate::carbon::total_emissions;
use crate::domain::Phase;
use crate::energy::total_energy;
use crate::ledger::RunLedger;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub label: String,
    pub nodes: usize,
    pub rounds: u32,
    /// gCO₂ per phase, indexed by [`Phase::index`].
    pub ce: [f64; 3],
    /// kWh per phase, indexed by [`Phase::index`].
    pub ec: [f64; 3],
    pub total_ce: f64,
    pub total_ec: f64,
    pub final_f1: Option<f64>,
}

impl Summary {
    pub fn ce(&self, phase: Phase) -> f64 {
        self.ce[phase.index()]
    }

    pub fn ec(&self, phase: Phase) -> f64 {
        self.ec[phase.index()]
    }
}

/// Totals come from the accounting folds, so they match them exactly.
pub fn summarize(ledger: &RunLedger, label: impl Into<String>) -> Summary {
    let energy = total_energy(&ledger.energy_records());
    let carbon = total_emissions(&ledger.emission_records());
    Summary {
        label: label.into(),
        nodes: ledger.node_count(),
        rounds: ledger.rounds_executed(),
        ce: carbon.per_phase,
        ec: energy.per_phase_kwh,
        total_ce: carbon.total,
        total_ec: energy.total_kwh,
        final_f1: ledger.final_f1(),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompareError {
    #[error("runs differ in {what}: `{a_label}` has {a}, `{b_label}` has {b} (use --force to compare anyway)")]
    Mismatch {
        what: &'static str,
        a_label: String,
        a: u64,
        b_label: String,
        b: u64,
    },
}

/// Refuses summaries whose node count or executed rounds differ.
pub fn check_comparable(summaries: &[Summary]) -> Result<(), CompareError> {
    let Some(first) = summaries.first() else {
        return Ok(());
    };
    for s in &summaries[1..] {
        if s.nodes != first.nodes {
            return Err(CompareError::Mismatch {
                what: "node count",
                a_label: first.label.clone(),
                a: first.nodes as u64,
                b_label: s.label.clone(),
                b: s.nodes as u64,
            });
        }
        if s.rounds != first.rounds {
            return Err(CompareError::Mismatch {
                what: "rounds",
                a_label: first.label.clone(),
                a: u64::from(first.rounds),
                b_label: s.label.clone(),
                b: u64::from(s.rounds),
            });
        }
    }
    Ok(())
}

/// Column order of the phase pairs in rendered tables.
pub const TABLE_PHASES: [Phase; 3] = [Phase::Training, Phase::Aggregation, Phase::Communication];

const HEADERS: [&str; 10] = [
    "run",
    "train_ce_g",
    "train_ec_kwh",
    "agg_ce_g",
    "agg_ec_kwh",
    "comm_ce_g",
    "comm_ec_kwh",
    "total_ce_g",
    "total_ec_kwh",
    "f1",
];

fn cells(s: &Summary, fmt: impl Fn(f64) -> String) -> Vec<String> {
    let mut v = vec![s.label.clone()];
    for p in TABLE_PHASES {
        v.push(fmt(s.ce(p)));
        v.push(fmt(s.ec(p)));
    }
    v.push(fmt(s.total_ce));
    v.push(fmt(s.total_ec));
    v.push(s.final_f1.map_or_else(|| "-".into(), |f| format!("{f:.4}")));
    v
}

/// Aligned plain-text table.
pub fn render_table(summaries: &[Summary]) -> String {
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| cells(s, |x| format!("{x:.6e}")))
        .collect();
    let mut widths: Vec<usize> = HEADERS.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, r: &[String]| {
        let parts: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &HEADERS.map(String::from));
    for r in &rows {
        line(&mut out, r);
    }
    out
}

/// The same table as CSV with full precision.
pub fn render_csv(summaries: &[Summary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADERS).expect("in-memory write");
    for s in summaries {
        w.write_record(cells(s, |x| format!("{x:.16e}")))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ASCII")
}
