//! End-to-end checks of the `rbsde` binary: exit codes, report files,
//! determinism and the convergence CSV.

use std::path::Path;
use std::process::Command;

fn rbsde() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rbsde"))
}

#[test]
fn solve_preset_writes_passing_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let status = rbsde()
        .args(["solve", "preset:two-mode-constant", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["status"], "ok");
    assert_eq!(report["command"], "solve");
    let y0 = report["values"]["y0"].as_array().unwrap();
    assert!((y0[0].as_f64().unwrap() - 2.0).abs() < 1e-2);
    assert!((y0[1].as_f64().unwrap() - 1.5).abs() < 1e-2);
}

#[test]
fn solve_writes_csv_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let csv = dir.path().join("values.csv");
    let status = rbsde()
        .args(["solve", "preset:two-mode-constant", "--out"])
        .arg(&out)
        .arg("--csv")
        .arg(&csv)
        .status()
        .unwrap();
    assert!(status.success());
    let table = parse_csv(&csv);
    assert_eq!(table.len(), 2);
    assert!((table[0]["y0"].parse::<f64>().unwrap() - 2.0).abs() < 1e-2);
    assert!((table[1]["y0"].parse::<f64>().unwrap() - 1.5).abs() < 1e-2);
    // the lifted mode carries the reflection mass
    assert!(table[1]["k_total"].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let status = rbsde()
            .args(["solve", "preset:three-mode-relay", "--seed", "7", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("seeded.json");
    let status = rbsde()
        .args(["solve", "preset:decoupled", "--seed", "123", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 123);
}

#[test]
fn malformed_config_names_missing_field_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"problem": {"modes": 1, "drivers": [{"kind": "constant", "c": 1.0}],
            "costs": {"kind": "uniform", "value": 0.5}}}"#,
    )
    .unwrap();
    let output = rbsde().arg("solve").arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("discount"),
        "stderr should name the missing field: {stderr}"
    );
}

#[test]
fn unknown_preset_exits_2() {
    let output = rbsde()
        .args(["solve", "preset:does-not-exist"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("unknown preset"));
}

#[test]
fn missing_config_file_exits_2() {
    let output = rbsde()
        .args(["solve", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn validation_failure_exits_1() {
    // triangle-violating cost matrix: 0.5 + 0.5 < 2.0
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("triangle.json");
    std::fs::write(
        &path,
        r#"{
            "problem": {
                "modes": 3,
                "discount": 1.0,
                "drivers": [
                    {"kind": "constant", "c": 3.0},
                    {"kind": "constant", "c": 2.0},
                    {"kind": "constant", "c": 1.0}
                ],
                "costs": {"kind": "matrix", "values": [
                    [0.0, 0.5, 2.0],
                    [0.5, 0.0, 0.5],
                    [2.0, 0.5, 0.0]
                ]}
            }
        }"#,
    )
    .unwrap();
    let output = rbsde().arg("solve").arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("validation"), "stderr: {stderr}");
}

#[test]
fn verify_passes_on_decoupled_preset() {
    let status = rbsde()
        .args(["verify", "preset:decoupled"])
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn convergence_csv_shrinks_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.csv");
    let status = rbsde()
        .args([
            "convergence",
            "preset:one-mode-constant",
            "--levels",
            "4",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let table = parse_csv(&out);
    assert_eq!(table.len(), 4);
    // deltas shrink by roughly a factor 2 per level (first-order scheme)
    let deltas: Vec<f64> = table[2..]
        .iter()
        .map(|row| row["delta_0"].parse::<f64>().unwrap())
        .collect();
    for pair in table[1..].windows(2) {
        let d0: f64 = pair[0]["delta_0"].parse().unwrap();
        let d1: f64 = pair[1]["delta_0"].parse().unwrap();
        let ratio = d0 / d1;
        assert!(
            (1.5..=3.0).contains(&ratio),
            "delta ratio {ratio} outside [1.5, 3]; deltas {deltas:?}"
        );
    }
    // deterministic problem: the Z column is identically zero
    for row in &table {
        assert_eq!(row["z0_0"].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn convergence_level_count_one_is_usage_error() {
    let output = rbsde()
        .args(["convergence", "preset:one-mode-constant", "--levels", "1"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

fn parse_csv(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|line| {
            header
                .iter()
                .zip(line.split(','))
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}
