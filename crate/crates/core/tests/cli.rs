use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn blendnet(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blendnet"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

const NETSIZE: &str = r#"
seed = 3
steps_per_round = 30
horizon = 120
eps = 0.4

[graph]
kind = "random"
nodes = 10
edge_probability = 0.35

[coupling]
kind = "metropolis_hastings"
parameter = 0.5

[app]
kind = "netsize"
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn validate_reports_gamma_of_network_size_map() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "ns.toml", NETSIZE);
    let out = blendnet(&["validate", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let gamma = v["gamma"].as_f64().unwrap();
    assert!((gamma - 0.81).abs() < 1e-9, "gamma = {gamma}");
}

#[test]
fn disconnected_graph_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "split.edges", "undirected\n1 2\n2 3\n4 5\n");
    let cfg = NETSIZE.replace(
        "kind = \"random\"\nnodes = 10\nedge_probability = 0.35",
        "kind = \"file\"\npath = \"split.edges\"",
    );
    let cfg = write(tmp.path(), "split.toml", &cfg);
    for cmd in ["validate", "run"] {
        let out = blendnet(&[cmd, "--config", &cfg], tmp.path());
        assert_eq!(out.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&out.stderr).contains("Assumption 2 violated"));
    }
}

#[test]
fn out_of_range_parameter_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = NETSIZE.replace(
        "kind = \"metropolis_hastings\"\nparameter = 0.5",
        "kind = \"average\"\nparameter = 1.2",
    );
    let cfg = write(tmp.path(), "theta.toml", &cfg);
    let out = blendnet(&["validate", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1.2"));
}

#[test]
fn unknown_field_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "typo.toml", &format!("{NETSIZE}\nhorizn = 5\n"));
    let out = blendnet(&["run", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizn"));
}

#[test]
fn run_writes_estimates_and_lists_events() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "leave.toml", &format!("{NETSIZE}\n[[events]]\nt = 40\nleave = 10\n"));
    let out = blendnet(&["run", "--config", &cfg, "--out", "result"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("result");
    for f in ["trace.csv", "blended.csv", "lyapunov.csv", "report.json"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let events = report["events_applied"].as_array().unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0]["t"], 40);
    let estimates = report["results"]["estimate"]["per_node"].as_object().unwrap();
    assert_eq!(estimates.len(), 9);
    assert!(estimates.values().all(|v| v == 9));

    let trace = fs::read_to_string(dir.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert!(lines.next().unwrap().starts_with("# scenario_hash="));
    assert_eq!(lines.next().unwrap(), "t,k,node_id,x0");
    assert!(trace.lines().any(|l| l.split(',').nth(2) == Some("s")));
}

#[test]
fn kmin_modes_and_ordering() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "ns.toml", NETSIZE);
    let out = blendnet(&["kmin", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let analytic = v["analytic"]["k"].as_u64().unwrap();
    let empirical = v["empirical"]["k"].as_u64().unwrap();
    assert!(empirical <= analytic);
    assert!(v["constants"]["eta"].as_f64().unwrap() > v["eta_threshold"].as_f64().unwrap());
    assert!(v["corollary"]["result"]["eps0"].as_f64().unwrap() > 0.0);

    let out = blendnet(&["kmin", "--config", &cfg, "--eps", "1e9", "--mode", "empirical"], tmp.path());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["empirical"]["k"], 1);
    assert!(v["analytic"].is_null());
}

#[test]
fn batch_uses_one_directory_per_config() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write(tmp.path(), "a.toml", NETSIZE);
    let b = write(tmp.path(), "b.toml", &NETSIZE.replace("seed = 3", "seed = 4"));
    write(tmp.path(), "split.edges", "undirected\n1 2\n3 4\n");
    let bad = write(
        tmp.path(),
        "bad.toml",
        &NETSIZE.replace(
            "kind = \"random\"\nnodes = 10\nedge_probability = 0.35",
            "kind = \"file\"\npath = \"split.edges\"",
        ),
    );
    let out = blendnet(&["batch", "--out", "all", &a, &b], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("all/a/report.json").exists());
    assert!(tmp.path().join("all/b/report.json").exists());
    let out = blendnet(&["batch", "--out", "mixed", &a, &bad], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_override_changes_the_graph() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "ns.toml", NETSIZE);
    let hash = |seed: &str| {
        let out = blendnet(&["validate", "--config", &cfg, "--seed", seed], tmp.path());
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        v["scenario_hash"].as_str().unwrap().to_string()
    };
    assert_eq!(hash("3"), hash("3"));
    assert_ne!(hash("3"), hash("8"));
}
