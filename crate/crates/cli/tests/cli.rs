use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cvxint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvxint"))
        .args(args)
        .env("CVXINT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("small.json");
    let text = format!(
        r#"{{
  "name": "small",
  "dim": 1,
  "initial": {{ "kind": "cosine", "amplitude": 0.6366197723675814, "mode": 1 }},
  "m": 2.0,
  "nx": 48,
  "nt": 48,
  "t_final": 0.1,
  "schedule": [[0.5, 0.5]]{extra}
}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn invalid_delta_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#", "delta": 0.7"#);
    let out_dir = dir.path().join("out");
    let o = cvxint(&["run", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("delta"));
    assert!(!out_dir.exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#", "typo": 1"#);
    assert_eq!(cvxint(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn hull_probe_prints_worked_frame() {
    let o = cvxint(&["hull-probe", "--p", "1,0", "--beta", "0.3,0", "--delta", "0.1"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["membership"], "Hull");
    assert!((v["lamination_expr"].as_f64().unwrap() + 0.12).abs() < 1e-12);
    let f = &v["frame"];
    assert!((f["t_plus"].as_f64().unwrap() - 2.0).abs() < 1e-10);
    assert!((f["t_minus"].as_f64().unwrap() + 2.0 / 3.0).abs() < 1e-10);
    assert!(v["residual"].as_f64().unwrap() < 1e-12);
}

#[test]
fn hull_probe_rejects_ragged_input() {
    let o = cvxint(&["hull-probe", "--p", "1,0", "--beta", "0.3", "--delta", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn small_run_passes_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = cvxint(&["run", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "diagnostics.csv", "parabolic_steps.csv", "iter00_u.bin", "iter01_u.bin", "iter01_v.bin"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(!out.join("failure.json").exists());
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["passed"], true);
    assert_eq!(m["config"]["seed"], 4);
    assert!(m["steps"][0]["residual_after"].as_f64().unwrap() <= 0.5);
    let rows = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn seeds_change_fields_but_not_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let mut fields = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(seed);
        let o = cvxint(&["run", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success());
        fields.push(fs::read(out.join("iter01_u.bin")).unwrap());
    }
    assert_ne!(fields[0], fields[1]);
}

#[test]
fn quick_verify_is_deterministic() {
    let a = cvxint(&["verify", "--level", "quick", "--seed", "5"]);
    let b = cvxint(&["verify", "--level", "quick", "--seed", "5"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stdout));
    // drop the timing column
    let strip = |o: &Output| -> Vec<String> {
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .map(|l| l.split_whitespace().enumerate().filter(|(i, _)| *i != 2).map(|(_, w)| w).collect::<Vec<_>>().join(" "))
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(strip(&a).len(), 9);
}
