mod common;

use std::path::Path;
use std::process::{Command, Output};

use dfl_carbon::ledger::{import_ledger, LedgerFormat, RunLedger};

use common::scenario_path;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfl-carbon"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fingerprint_line(out: &str) -> String {
    out.lines()
        .find(|l| l.starts_with("ledger fingerprint:"))
        .unwrap()
        .to_string()
}

/// Writes a shortened copy of the replica scenario with `edit` applied.
fn scenario_variant(dir: &Path, name: &str, edit: impl Fn(&mut serde_json::Value)) -> String {
    let text = std::fs::read_to_string(scenario_path("es_10node_fc.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["rounds"] = 3.into();
    edit(&mut v);
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn validate_accepts_bundled_scenarios() {
    for name in [
        "es_10node_fc.json",
        "mixed_er_green.json",
        "registry_ring_krum.json",
        "es_10node_early_stop.json",
    ] {
        let o = bin(&["validate", "--scenario", path_str(&scenario_path(name))]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
        assert!(stdout(&o).starts_with("ok: 10 nodes"));
    }
}

#[test]
fn validate_names_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = scenario_variant(dir.path(), "bad.json", |v| {
        v["nodes"][0]["region"]["renewable_ratio"] = 1.5.into()
    });
    let o = bin(&["validate", "--scenario", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("nodes[0].region.renewable_ratio"),
        "{}",
        stderr(&o)
    );

    let missing = dir.path().join("nope.json");
    assert_eq!(
        bin(&["validate", "--scenario", path_str(&missing)])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn usage_errors_and_help() {
    let o = bin(&["launch"]);
    assert_eq!(o.status.code(), Some(64));
    assert!(!stderr(&o).is_empty());
    assert_eq!(bin(&["run"]).status.code(), Some(64));
    assert_eq!(
        bin(&["run", "--scenario", "x.json", "--format", "xml"])
            .status
            .code(),
        Some(64)
    );
    let help = bin(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    for cmd in ["run", "validate", "report", "sweep"] {
        assert!(stdout(&help).contains(cmd));
    }
}

#[test]
fn runtime_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let diverging = scenario_variant(dir.path(), "diverge.json", |v| {
        v["learning_rate"] = 1e300.into()
    });
    let o = bin(&[
        "run",
        "--scenario",
        &diverging,
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn run_is_deterministic_and_format_independent() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario_variant(dir.path(), "s.json", |_| {});
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let oa = bin(&["run", "--scenario", &sc, "--out", path_str(&a)]);
    let ob = bin(&["run", "--scenario", &sc, "--out", path_str(&b)]);
    let oc = bin(&[
        "run",
        "--scenario",
        &sc,
        "--out",
        path_str(&c),
        "--format",
        "csv",
    ]);
    for o in [&oa, &ob, &oc] {
        assert_eq!(o.status.code(), Some(0), "{}", stderr(o));
    }
    assert_eq!(
        fingerprint_line(&stdout(&oa)),
        fingerprint_line(&stdout(&ob))
    );
    assert_eq!(
        fingerprint_line(&stdout(&oa)),
        fingerprint_line(&stdout(&oc))
    );
    assert_eq!(
        std::fs::read(a.join("ledger.json")).unwrap(),
        std::fs::read(b.join("ledger.json")).unwrap()
    );
    assert!(a.join("summary.csv").exists());

    let csv = std::fs::read_to_string(c.join("ledger.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10 * 3 * 3);
    assert!(csv.starts_with("node,round,phase,duration_s,bytes_sent,bytes_recv,cpu_j,gpu_j,comm_j,total_j,energy_kwh,effective_ci,gco2\n"));

    // export -> import -> export is byte-identical in both formats
    for (file, format) in [
        ("a/ledger.json", LedgerFormat::Json),
        ("c/ledger.csv", LedgerFormat::Csv),
    ] {
        let text = std::fs::read_to_string(dir.path().join(file)).unwrap();
        let again = RunLedger::parse(&text, format)
            .unwrap()
            .render(format)
            .unwrap();
        assert_eq!(text, again, "{file}");
    }
    let from_json = import_ledger(a.join("ledger.json")).unwrap();
    let from_csv = import_ledger(c.join("ledger.csv")).unwrap();
    assert_eq!(from_json.rows, from_csv.rows);
    assert_eq!(from_json.fingerprint(), from_csv.fingerprint());
}

#[test]
fn report_prints_tables_and_guards_comparisons() {
    let dir = tempfile::tempdir().unwrap();
    let ten = scenario_variant(dir.path(), "ten.json", |_| {});
    let five = scenario_variant(dir.path(), "five.json", |v| {
        v["nodes"].as_array_mut().unwrap().truncate(5);
    });
    let d10 = dir.path().join("ten");
    let d5 = dir.path().join("five");
    assert_eq!(
        bin(&["run", "--scenario", &ten, "--out", path_str(&d10)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        bin(&[
            "run",
            "--scenario",
            &five,
            "--out",
            path_str(&d5),
            "--format",
            "csv"
        ])
        .status
        .code(),
        Some(0)
    );
    let l10 = d10.join("ledger.json");
    let l5 = d5.join("ledger.csv");

    let o = bin(&["report", "--ledger", path_str(&l10)]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("run"));
    assert!(out.contains("train_ce_g") && out.contains("comm_ec_kwh"));

    let refused = bin(&[
        "report",
        "--ledger",
        path_str(&l10),
        "--compare",
        path_str(&l5),
    ]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(stderr(&refused).contains("node count"));
    let forced = bin(&[
        "report",
        "--ledger",
        path_str(&l10),
        "--compare",
        path_str(&l5),
        "--force",
        "--csv",
    ]);
    assert_eq!(forced.status.code(), Some(0));
    assert_eq!(stdout(&forced).lines().count(), 3);

    let adj = bin(&["report", "--ledger", path_str(&l10), "--adjacency"]);
    assert_eq!(adj.status.code(), Some(0));
    let parsed: Vec<Vec<u32>> = serde_json::from_str(stdout(&adj).trim()).unwrap();
    assert_eq!(parsed.len(), 10);
    assert!(parsed.iter().all(|n| n.len() == 9));
    assert_eq!(
        bin(&["report", "--ledger", path_str(&l5), "--adjacency"])
            .status
            .code(),
        Some(1)
    );

    let garbage = dir.path().join("garbage.csv");
    std::fs::write(&garbage, "a,b\n1,2\n").unwrap();
    assert_eq!(
        bin(&["report", "--ledger", path_str(&garbage)])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn medium_sweep_reproduces_per_byte_ratios() {
    let sc = scenario_path("es_10node_fc.json");
    let o = bin(&[
        "sweep",
        "--scenario",
        path_str(&sc),
        "--vary",
        "medium=wired,optical,mobile",
        "--csv",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let mut reader = csv::Reader::from_reader(out.as_bytes());
    let col = reader
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "comm_ec_kwh")
        .unwrap();
    let comm: Vec<f64> = reader
        .records()
        .map(|r| r.unwrap()[col].parse().unwrap())
        .collect();
    assert_eq!(comm.len(), 3);
    for (v, e) in comm.iter().zip([8e-11, 3.52e-14, 3.33e-8]) {
        let ratio = v / comm[0];
        assert!((ratio - e / 8e-11).abs() <= 1e-12 * (e / 8e-11), "{ratio}");
    }
}

#[test]
fn sweep_rejects_bad_values() {
    let sc = scenario_path("es_10node_fc.json");
    for vary in [
        "medium=wired,carrier-pigeon",
        "colour=red",
        "renewable=2",
        "nodes",
    ] {
        let o = bin(&["sweep", "--scenario", path_str(&sc), "--vary", vary]);
        assert_eq!(o.status.code(), Some(1), "{vary}");
    }
}

#[test]
fn sweep_writes_ledgers_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario_variant(dir.path(), "s.json", |_| {});
    let out = dir.path().join("sweep");
    let o = bin(&[
        "sweep",
        "--scenario",
        &sc,
        "--vary",
        "region=ES,CH",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let es = import_ledger(out.join("region_ES.json")).unwrap();
    let ch = import_ledger(out.join("region_CH.json")).unwrap();
    assert_eq!(es.energy_records(), ch.energy_records());
}
