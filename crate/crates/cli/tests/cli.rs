use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn repc(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_repc"));
    cmd.args(args).env_remove("REPC_OUT");
    if let Some(dir) = out_env {
        cmd.env("REPC_OUT", dir);
    }
    cmd.output().expect("spawn repc")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const K5_CONFIG: &str = r#"{
    "name": "k5",
    "graph": {"complete": 5},
    "x0": [1, 0, 3, 1.2, 2.5],
    "seed": 3
}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn preset_writes_artifacts_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = repc(&["preset", "no_attack", "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["config.json", "states.csv", "reputations.csv", "states.svg", "summary.json"] {
        assert!(dir.path().join(format!("no_attack_{f}")).is_file(), "missing {f}");
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("no_attack_summary.json")).unwrap()).unwrap();
    let v = summary["consensus_value"].as_f64().unwrap();
    assert!((v - 1.489).abs() < 0.05, "consensus {v}");
    assert_eq!(summary["stop"], "converged");
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = repc(&["preset", "near_consensus_attacker"], Some(dir.path()));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("near_consensus_attacker_states.csv").is_file());
}

#[test]
fn unknown_preset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = repc(&["preset", "nonexistent", "--out", dir.path().to_str().unwrap()], None);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("no_attack"), "error should list the known presets: {}", stderr(&o));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn invalid_epsilon_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"graph": {"complete": 5}, "x0": [1, 0, 3, 1.2, 2.5], "epsilon": 1.5}"#);
    let out = dir.path().join("out");
    let o = repc(&["run", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("epsilon"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn every_config_problem_is_reported_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"graph": {"complete": 3}, "x0": [1, 2], "epsilon": 0, "f": 0, "bogus": 1}"#);
    let o = repc(&["run", &cfg], Some(dir.path()));
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    for needle in ["epsilon", "f must", "bogus", "x0"] {
        assert!(err.contains(needle), "missing {needle:?} in {err}");
    }
}

#[test]
fn malformed_json_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "broken.json", "{\"graph\": ");
    assert_eq!(code(&repc(&["run", &cfg], Some(dir.path()))), 1);
    let missing = dir.path().join("absent.json");
    assert_eq!(code(&repc(&["run", missing.to_str().unwrap()], Some(dir.path()))), 2);
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(code(&repc(&[], None)), 1);
    assert_eq!(code(&repc(&["frobnicate"], None)), 1);
    assert_eq!(code(&repc(&["--help"], None)), 0);
}

#[test]
fn run_writes_traces_named_after_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.json", K5_CONFIG);
    let o = repc(&["run", &cfg], Some(dir.path()));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let states = fs::read_to_string(dir.path().join("k5_states.csv")).unwrap();
    assert!(states.starts_with("k,agent,x\n"));
    assert_eq!((states.lines().count() - 1) % 5, 0);
}

#[test]
fn defaulted_seed_is_announced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "noseed.json", r#"{"graph": {"complete": 4}, "x0": [0, 1, 2, 3]}"#);
    let o = repc(&["run", &cfg], Some(dir.path()));
    assert_eq!(code(&o), 0);
    let all = String::from_utf8_lossy(&o.stdout).into_owned() + &stderr(&o);
    assert!(all.contains("seed"), "{all}");
}

/// Polyline points `(x, y)` of every polyline with the given class.
fn polylines(svg: &str, class: &str) -> Vec<Vec<(f64, f64)>> {
    let marker = format!(r#"class="{class}""#);
    svg.split("<polyline")
        .skip(1)
        .filter(|p| p.contains(&marker))
        .map(|p| {
            let start = p.find("points=\"").unwrap() + 8;
            let end = start + p[start..].find('"').unwrap();
            p[start..end]
                .split_whitespace()
                .map(|xy| {
                    let (x, y) = xy.split_once(',').unwrap();
                    (x.parse().unwrap(), y.parse().unwrap())
                })
                .collect()
        })
        .collect()
}

#[test]
fn state_plot_ends_at_the_consensus_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = repc(&["preset", "no_attack"], Some(dir.path()));
    assert_eq!(code(&o), 0);
    let svg = fs::read_to_string(dir.path().join("no_attack_states.svg")).unwrap();
    let lines = polylines(&svg, "regular");
    assert_eq!(lines.len(), 5);
    // Round-0 ordinates of the agents starting at 0 and 3 fix the vertical scale.
    let y0 = lines[1][0].1;
    let y3 = lines[2][0].1;
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("no_attack_summary.json")).unwrap()).unwrap();
    let value = summary["consensus_value"].as_f64().unwrap();
    let expected = y0 + (y3 - y0) * value / 3.0;
    for (agent, line) in lines.iter().enumerate() {
        let end = line.last().unwrap().1;
        assert!((end - expected).abs() <= 1.0, "agent {agent} ends at {end}, expected {expected}");
    }
}

#[test]
fn error_sweep_preset_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = repc(&["preset", "error_sweep", "--desk-scale"], Some(dir.path()));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("error_sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("cell,overrides,runs,mean_error"));
    assert_eq!(lines.count(), 15);
    assert!(dir.path().join("error_sweep_heatmap.svg").is_file());
}

#[test]
fn sweep_command_over_axes() {
    let dir = tempfile::tempdir().unwrap();
    let base = write(
        dir.path(),
        "base.json",
        r#"{"name": "base", "graph": {"complete": 5}, "x0": [1, 0, 3, 1.2, 2.5],
            "attack": {"agents": [{"agent": 0, "kind": "constant", "value": 0.5}]}}"#,
    );
    let grid = write(
        dir.path(),
        "grid.json",
        r#"{"repeats": 2, "seed": 9, "axes": [
            {"path": "/attack/agents/0/value", "values": [0.1, 0.9]},
            {"path": "/epsilon", "values": [0.1, 0.2, 0.3]}]}"#,
    );
    let o = repc(&["sweep", &base, &grid], Some(dir.path()));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = fs::read(dir.path().join("base_sweep.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 1 + 6);
    let again = repc(&["sweep", &base, &grid], Some(dir.path()));
    assert_eq!(code(&again), 0);
    assert_eq!(first, fs::read(dir.path().join("base_sweep.csv")).unwrap());
}

#[test]
fn sweep_rejects_a_bad_grid() {
    let dir = tempfile::tempdir().unwrap();
    let base = write(dir.path(), "base.json", K5_CONFIG);
    let grid = write(dir.path(), "grid.json", r#"{"repeats": 0, "axes": [{"path": "/nope", "values": [1]}]}"#);
    let o = repc(&["sweep", &base, &grid], Some(dir.path()));
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn preset_reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(code(&repc(&["preset", "stochastic", "--seed", "7"], Some(d.path()))), 0);
    }
    for f in ["stochastic_states.csv", "stochastic_reputations.csv", "stochastic_summary.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}
