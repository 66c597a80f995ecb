//! Command-line interface. Exit codes: 0 success, 1 invalid input,
//! 2 runtime failure, 64 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::aggregation::{AggregationSpec, ThresholdSpec};
use crate::config::{load_scenario, ScenarioConfig};
use crate::domain::{ingest_medium, CommMedium, NodeId, RegionProfile};
use crate::engine::{run_scenario, EngineError};
use crate::learning::PartitionSpec;
use crate::ledger::{export_ledger, import_ledger, LedgerFormat, RunLedger};
use crate::report::{check_comparable, render_csv, render_table, summarize, Summary};
use crate::selection::SelectionSpec;
use crate::topology::TopologySpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "dfl-carbon",
    version,
    about = "Decentralized federated learning simulator with energy and carbon accounting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for LedgerFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => LedgerFormat::Csv,
            FormatArg::Json => LedgerFormat::Json,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write its ledger and summary.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory (created if missing).
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
    },
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Print summary tables for one or more ledgers.
    Report {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long, num_args = 1..)]
        compare: Vec<PathBuf>,
        /// Compare runs even when node count or rounds differ.
        #[arg(long)]
        force: bool,
        /// Print CSV instead of an aligned table.
        #[arg(long)]
        csv: bool,
        /// Print the topology adjacency (JSON ledgers only) instead of a table.
        #[arg(long)]
        adjacency: bool,
    },
    /// Run a one-parameter sweep and print a comparison table.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// `<param>=<v1,v2,...>`; params: medium, region, renewable, topology,
        /// nodes, aggregation, selection, partition, rounds, seed, epochs.
        #[arg(long)]
        vary: String,
        #[arg(long)]
        csv: bool,
        /// Also write each run's ledger (JSON) into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn invalid(message: impl ToString) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.to_string(),
        }
    }

    fn runtime(message: impl ToString) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.to_string(),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(_) | EngineError::Topology(_) => Failure::invalid(e),
            other => Failure::runtime(other),
        }
    }
}

/// Parses `argv` (including the program name) and executes the command.
pub fn cli<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let result = match parsed.command {
        Command::Run {
            scenario,
            out: dir,
            format,
        } => cmd_run(&scenario, &dir, format.into(), out),
        Command::Validate { scenario } => cmd_validate(&scenario, out),
        Command::Report {
            ledger,
            compare,
            force,
            csv,
            adjacency,
        } => cmd_report(&ledger, &compare, force, csv, adjacency, out),
        Command::Sweep {
            scenario,
            vary,
            csv,
            out: dir,
        } => cmd_sweep(&scenario, &vary, csv, dir.as_deref(), out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes()).map_err(Failure::runtime)
}

fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    load_scenario(path).map_err(Failure::invalid)
}

fn cmd_run(
    path: &Path,
    dir: &Path,
    format: LedgerFormat,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let config = load(path)?;
    let result = run_scenario(&config)?;
    let ledger = RunLedger::from_run(&result);
    std::fs::create_dir_all(dir).map_err(Failure::runtime)?;
    let ledger_path = dir.join(format!("ledger.{}", format.extension()));
    export_ledger(&ledger, format, &ledger_path).map_err(Failure::runtime)?;
    let summary = summarize(&ledger, run_label(path));
    std::fs::write(
        dir.join("summary.csv"),
        render_csv(std::slice::from_ref(&summary)),
    )
    .map_err(Failure::runtime)?;
    let mut text = render_table(std::slice::from_ref(&summary));
    text.push_str(&format!("ledger: {}\n", ledger_path.display()));
    text.push_str(&format!("ledger fingerprint: {}\n", ledger.fingerprint()));
    if let Some(meta) = &ledger.meta {
        text.push_str(&format!(
            "scenario fingerprint: {}\n",
            meta.scenario_fingerprint
        ));
    }
    for flag in &ledger.flags {
        text.push_str(&format!("note: {flag}\n"));
    }
    write_out(out, &text)
}

fn run_label(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_validate(path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let config = load(path)?;
    write_out(
        out,
        &format!(
            "ok: {} nodes, {} rounds, topology {}, aggregation {}\n",
            config.node_count(),
            config.rounds,
            config.topology.label(),
            config.aggregation.label()
        ),
    )
}

fn cmd_report(
    first: &Path,
    others: &[PathBuf],
    force: bool,
    csv: bool,
    adjacency: bool,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let mut ledgers = Vec::new();
    for path in std::iter::once(first).chain(others.iter().map(PathBuf::as_path)) {
        let ledger = import_ledger(path)
            .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
        ledger
            .check_complete()
            .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
        ledgers.push((path, ledger));
    }
    if adjacency {
        let meta = ledgers[0]
            .1
            .meta
            .as_ref()
            .ok_or_else(|| Failure::invalid("adjacency needs a JSON ledger"))?;
        let adj: Vec<Vec<u32>> = meta
            .adjacency
            .iter()
            .map(|n| n.iter().map(|id: &NodeId| id.0).collect())
            .collect();
        let text = serde_json::to_string(&adj).map_err(Failure::runtime)?;
        return write_out(out, &format!("{text}\n"));
    }
    let summaries: Vec<Summary> = ledgers
        .iter()
        .map(|(p, l)| summarize(l, p.display().to_string()))
        .collect();
    if !force {
        check_comparable(&summaries).map_err(Failure::invalid)?;
    }
    write_out(
        out,
        &if csv {
            render_csv(&summaries)
        } else {
            render_table(&summaries)
        },
    )
}

/// Applies one sweep value to a scenario.
pub fn apply_override(
    config: &ScenarioConfig,
    param: &str,
    value: &str,
) -> Result<ScenarioConfig, String> {
    let mut c = config.clone();
    let num = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| format!("`{v}` is not a number"))
    };
    let int = |v: &str| {
        v.parse::<u64>()
            .map_err(|_| format!("`{v}` is not a non-negative integer"))
    };
    match param {
        "medium" => {
            let medium = match ingest_medium(value) {
                Ok(m) => m,
                Err(e) => CommMedium::custom(num(value).map_err(|_| e.to_string())?),
            };
            c.nodes.iter_mut().for_each(|n| n.medium = medium);
        }
        "region" => {
            let base = match value.split_once(':') {
                Some((name, ci)) => RegionProfile::new(name, num(ci)?, 0.0),
                None => RegionProfile::builtin(value)
                    .ok_or_else(|| format!("unknown region `{value}`; use NAME:CI"))?,
            };
            for n in &mut c.nodes {
                n.region = RegionProfile::new(
                    base.name.clone(),
                    base.grid_carbon_intensity,
                    n.region.renewable_ratio,
                );
            }
        }
        "renewable" => {
            let r = num(value)?;
            c.nodes
                .iter_mut()
                .for_each(|n| n.region.renewable_ratio = r);
        }
        "topology" => {
            c.topology = match value {
                "fully_connected" | "fc" => TopologySpec::FullyConnected,
                "ring" => TopologySpec::Ring,
                v => match v
                    .strip_prefix("er:")
                    .or_else(|| v.strip_prefix("erdos_renyi:"))
                {
                    Some(p) => TopologySpec::ErdosRenyi { p: num(p)? },
                    None => {
                        return Err(format!(
                            "unknown topology `{v}`; use fully_connected, ring or er:<p>"
                        ))
                    }
                },
            };
        }
        "nodes" => {
            let k = int(value)? as usize;
            let template = c.nodes.clone();
            c.nodes = (0..k)
                .map(|i| {
                    let mut n = template[i % template.len()].clone();
                    n.id = NodeId::from(i);
                    n
                })
                .collect();
        }
        "aggregation" => {
            c.aggregation = match value {
                "fedavg" => AggregationSpec::FedAvg,
                v if v.starts_with("krum:") => AggregationSpec::Krum {
                    f: int(&v[5..])? as usize,
                },
                v if v.starts_with("green_sa:p") => AggregationSpec::GreenSa {
                    threshold: ThresholdSpec::Percentile(num(&v[10..])?),
                },
                v if v.starts_with("green_sa:") => AggregationSpec::GreenSa {
                    threshold: ThresholdSpec::Fixed(num(&v[9..])?),
                },
                v => return Err(format!("unknown aggregation `{v}`; use fedavg, krum:<f>, green_sa:<c> or green_sa:p<q>")),
            };
        }
        "selection" => {
            c.selection = match value {
                "none" => SelectionSpec::None,
                "green_sn" => SelectionSpec::GreenSn,
                v => return Err(format!("unknown selection `{v}`")),
            };
        }
        "partition" => {
            c.data.partition = match value {
                "iid" => PartitionSpec::Iid,
                v => match v.strip_prefix("dirichlet:") {
                    Some(a) => PartitionSpec::Dirichlet { alpha: num(a)? },
                    None => return Err(format!("unknown partition `{v}`")),
                },
            };
        }
        "rounds" => c.rounds = int(value)? as u32,
        "epochs" => c.local_epochs = int(value)? as u32,
        "seed" => c.seed = int(value)?,
        other => return Err(format!("cannot vary `{other}`")),
    }
    c.validate().map_err(|e| format!("{param}={value}: {e}"))?;
    Ok(c)
}

fn cmd_sweep(
    path: &Path,
    vary: &str,
    csv: bool,
    dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let config = load(path)?;
    let (param, values) = vary
        .split_once('=')
        .ok_or_else(|| Failure::invalid("--vary expects <param>=<v1,v2,...>"))?;
    let variants: Vec<(String, ScenarioConfig)> = values
        .split(',')
        .map(|v| {
            let v = v.trim();
            apply_override(&config, param, v).map(|c| (format!("{param}={v}"), c))
        })
        .collect::<Result<_, _>>()
        .map_err(Failure::invalid)?;
    let ledgers: Vec<(String, RunLedger)> = variants
        .par_iter()
        .map(|(label, c)| run_scenario(c).map(|r| (label.clone(), RunLedger::from_run(&r))))
        .collect::<Result<_, _>>()?;
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(Failure::runtime)?;
        for (label, ledger) in &ledgers {
            let name = label.replace(['=', ':', '/'], "_");
            export_ledger(ledger, LedgerFormat::Json, dir.join(format!("{name}.json")))
                .map_err(Failure::runtime)?;
        }
    }
    let summaries: Vec<Summary> = ledgers
        .iter()
        .map(|(label, l)| summarize(l, label.clone()))
        .collect();
    write_out(
        out,
        &if csv {
            render_csv(&summaries)
        } else {
            render_table(&summaries)
        },
    )
}
