use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn wcnet(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wcnet"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .unwrap()
}

fn rows(path: &Path) -> (Vec<String>, Vec<csv::StringRecord>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows: Vec<_> = r.records().map(|x| x.unwrap()).collect();
    (header, rows)
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = wcnet(&["run", "--config", "/nonexistent.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn bad_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("tiny_two_node.json");
    let o = wcnet(
        &["run", "--config", cfg.to_str().unwrap(), "--override", "control.speed=1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_writes_metrics_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("tiny_two_node.json");
    let o = wcnet(
        &[
            "run", "--config", cfg.to_str().unwrap(), "--slots", "2000", "--seed", "9",
            "--override", "control.V=0", "--override", "control.trace_stride=10",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(doc["metrics"]["horizon"], 2000);
    assert_eq!(doc["metrics"]["seed"], 9);
    assert_eq!(doc["metrics"]["v"], 0.0);
    // the resolved config is echoed
    assert_eq!(doc["config"]["control"]["v"], 0.0);
    assert_eq!(doc["config"]["control"]["horizon"], 2000);
    let (header, trace) = rows(&dir.path().join("trace.csv"));
    assert_eq!(header, ["t", "cost", "occupancy", "delivered"]);
    assert_eq!(trace.len(), 200);
    assert!(trace.iter().all(|r| r.len() == 4));
}

#[test]
fn sweep_rows_and_shared_channel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("tiny_two_node.json");
    let o = wcnet(
        &[
            "sweep", "--config", cfg.to_str().unwrap(), "--slots", "3000", "--grid", "2,4,6",
            "--replicates", "2",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, sweep) = rows(&dir.path().join("sweep.csv"));
    assert_eq!(header, ["scheme", "axis_value", "replicate", "avg_cost", "avg_occupancy", "stable"]);
    assert_eq!(sweep.len(), 2 * 3 * 2);
    let (_, ck) = rows(&dir.path().join("checksums.csv"));
    for r in ck.iter().filter(|r| &r[0] == "broadcast") {
        let twin = ck
            .iter()
            .find(|o| &o[0] == "outage" && o[1] == r[1] && o[2] == r[2])
            .unwrap();
        assert_eq!(twin[3], r[3]);
    }
    // replicates draw different channels
    assert_ne!(ck[0][3], ck[1][3]);
}

#[test]
fn unsorted_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("tiny_two_node.json");
    let o = wcnet(&["sweep", "--config", cfg.to_str().unwrap(), "--grid", "3,1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn capacity_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("tiny_two_node.json");
    let lp = dir.path().join("model.lp");
    let o = wcnet(
        &["capacity", "--config", cfg.to_str().unwrap(), "--export-lp", lp.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!((v - 12.0).abs() < 1e-7);
    assert!(std::fs::read_to_string(&lp).unwrap().starts_with("Maximize"));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("capacity.json")).unwrap()).unwrap();
    assert!((doc["value"].as_f64().unwrap() - 12.0).abs() < 1e-7);

    let o = wcnet(
        &["capacity", "--config", cfg.to_str().unwrap(), "--mode", "min-cost", "--rate", "5"],
        dir.path(),
    );
    assert!(o.status.success());
    let v: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!((v - (0.5 + 5.0 / 12.0)).abs() < 1e-7);

    let o = wcnet(
        &["capacity", "--config", cfg.to_str().unwrap(), "--mode", "min-cost", "--rate", "13"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), "infeasible");
}

#[test]
fn distribution_has_a_row_per_node_and_function() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("tiny_relay.json");
    let o = wcnet(&["distribution", "--config", cfg.to_str().unwrap(), "--slots", "5000"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, dist) = rows(&dir.path().join("distribution.csv"));
    assert_eq!(header, ["node", "service", "function", "avg_rate"]);
    assert_eq!(dist.len(), 3);
    // only the relay can process
    let rate = |node: &str| dist.iter().find(|r| &r[0] == node).unwrap()[3].parse::<f64>().unwrap();
    assert_eq!(rate("1"), 0.0);
    assert!(rate("2") > 0.0);
    assert_eq!(rate("3"), 0.0);
}
