use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fdtdq::checkpoint;
use fdtdq::cli::exit;
use serde_json::Value;
use tempfile::TempDir;

fn fdtdq(args: &[&str], threads: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdtdq"))
        .args(args)
        .env("FDTDQ_THREADS", threads.to_string())
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

fn run(config: &Path, out: &Path, extra: &[&str], threads: usize) -> (i32, Value) {
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = fdtdq(&args, threads);
    let code = o.status.code().unwrap();
    let summary =
        fs::read_to_string(out.join("summary.json")).map(|s| serde_json::from_str(&s).unwrap()).unwrap_or(Value::Null);
    (code, summary)
}

#[test]
fn well_run_conserves_probability() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "well.json", r#"{"scenario": "infinite_well", "n_t": 1500}"#);
    let (code, s) = run(&cfg, &dir.path().join("out"), &["--stride", "50"], 1);
    assert_eq!(code, exit::OK);
    assert_eq!(s["schema_version"], 1);
    assert_eq!(s["status"], "completed");
    assert_eq!(s["steps_completed"], 1500);
    assert!(s["max_residual_P"].as_f64().unwrap() <= 5e-15, "{s}");
    assert!(s["max_residual_H"].as_f64().unwrap() <= 5e-15);
    assert_eq!(s["energy_bounds_hold"], true);
    assert!(s["min_P"].as_f64().unwrap() > 0.0);
    let rows = s["regions"][0]["rows"].as_u64().unwrap();
    // Steps 0, 1, 50, 100, ..., 1500.
    assert_eq!(rows, 2 + 30);
}

#[test]
fn zero_steps_write_header_only_csv() {
    let dir = TempDir::new().unwrap();
    let cfg =
        write_config(dir.path(), "w.json", r#"{"scenario": "infinite_well", "n_t": 0, "geometry": {"cells": 4}}"#);
    let out = dir.path().join("out");
    let (code, _) = run(&cfg, &out, &[], 1);
    assert_eq!(code, exit::OK);
    let csv = fs::read_to_string(out.join("well.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("n,t_seconds,P,P_simple,"));
}

#[test]
fn config_errors_have_their_own_exit_code() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let bad = write_config(dir.path(), "bad.json", r#"{"scenario": "infinite_well", "diag_stride": 0}"#);
    assert_eq!(run(&bad, &out, &[], 1).0, exit::CONFIG);
    let ok =
        write_config(dir.path(), "ok.json", r#"{"scenario": "infinite_well", "n_t": 2, "geometry": {"cells": 3}}"#);
    assert_eq!(run(&ok, &out, &["--stride", "0"], 1).0, exit::CONFIG);
    let missing = dir.path().join("absent.json");
    assert_eq!(run(&missing, &out, &[], 1).0, exit::CONFIG);
    let unstable = write_config(
        dir.path(),
        "fast.json",
        r#"{"scenario": "infinite_well", "dt_factor": 1.01, "n_t": 2, "geometry": {"cells": 3}}"#,
    );
    assert_eq!(run(&unstable, &out, &[], 1).0, exit::CONFIG);
    assert_eq!(fdtdq(&["run", "--bogus"], 1).status.code(), Some(exit::USAGE));
}

#[test]
fn unstable_tunneling_run_reports_divergence() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "t.json", r#"{"scenario": "tunneling", "dt_factor": 1.005, "diag_stride": 10}"#);
    let (code, s) = run(&cfg, &dir.path().join("out"), &["--allow-unstable"], 1);
    assert_eq!(code, exit::DIVERGED);
    assert_eq!(s["status"], "diverged");
    let last = s["last_stable_step"].as_u64().unwrap();
    assert!(last > 0 && last + 1 == s["steps_completed"].as_u64().unwrap(), "{s}");
    assert!(last < s["n_t"].as_u64().unwrap());
    // The barrier region's probability goes negative before the guard trips.
    assert!(s["regions"][1]["min_P"].as_f64().unwrap() < 0.0);
    assert!(s["regions"][1]["energy_lower_bound_J"].is_null());
}

#[test]
fn csv_is_deterministic_across_runs_and_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg =
        write_config(dir.path(), "w.json", r#"{"scenario": "infinite_well", "n_t": 200, "geometry": {"cells": 8}}"#);
    let read = |name: &str, threads: usize| {
        let out = dir.path().join(name);
        assert_eq!(run(&cfg, &out, &[], threads).0, exit::OK);
        fs::read(out.join("well.csv")).unwrap()
    };
    let a = read("a", 1);
    let b = read("b", 1);
    assert_eq!(a, b);
    let c = read("c", 3);
    let parse = |bytes: &[u8]| -> Vec<Vec<Option<f64>>> {
        let mut r = csv::Reader::from_reader(bytes);
        r.records().map(|rec| rec.unwrap().iter().map(|f| f.parse::<f64>().ok()).collect()).collect()
    };
    let (pa, pc) = (parse(&a), parse(&c));
    assert_eq!(pa.len(), pc.len());
    for (ra, rc) in pa.iter().zip(&pc) {
        for (x, y) in ra.iter().zip(rc) {
            match (x, y) {
                (Some(x), Some(y)) => {
                    let ulp = f64::EPSILON * x.abs().max(f64::MIN_POSITIVE);
                    assert!((x - y).abs() <= ulp, "{x} vs {y}");
                }
                (None, None) => {}
                _ => panic!("field presence differs"),
            }
        }
    }
}

#[test]
fn checkpoints_are_written_at_the_interval() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "w.json",
        r#"{"scenario": "infinite_well", "n_t": 25, "checkpoint_interval": 10, "geometry": {"cells": 5}}"#,
    );
    let out = dir.path().join("out");
    let (code, s) = run(&cfg, &out, &[], 1);
    assert_eq!(code, exit::OK);
    let names: Vec<&str> = s["checkpoints"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(
        names,
        ["checkpoints/well_000000010.txt", "checkpoints/well_000000020.txt", "checkpoints/well_000000025.txt"]
    );
    let st = checkpoint::load(out.join(names[2])).unwrap();
    assert_eq!(st.n, 25);
    assert_eq!(st.psi_r.len(), 6 * 6 * 6);
}

#[test]
fn cfl_reports_single_cell_limits() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"scenario": "infinite_well", "geometry": {"cells": 1}}"#);
    let out = dir.path().join("out");
    let o = fdtdq(&["cfl", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], 1);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("region"));
    let json: Value = serde_json::from_str(&fs::read_to_string(out.join("cfl.json")).unwrap()).unwrap();
    let r = &json[0]["report"];
    // A single zero-potential cell: both limits coincide.
    assert!(r["relative_difference"].as_f64().unwrap().abs() < 1e-14);
    assert_eq!(r["ordering_holds"], true);
    assert_eq!(r["pd_consistent"], true);
    let checks = r["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 3);
    assert_eq!(checks[2]["positive_definite"], false);
}

#[test]
fn verify_passes_and_detects_injected_sign_error() {
    let o = fdtdq(&["verify"], 1);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(o.status.code(), Some(exit::OK), "{text}");
    assert!(text.contains("0 failed"));
    assert!(text.contains("mutation"));
    let o = fdtdq(&["verify", "--inject-sign-error"], 1);
    assert_eq!(o.status.code(), Some(exit::VERIFY_FAILED));
    let text = String::from_utf8(o.stdout).unwrap();
    let failed: Vec<&str> = text.lines().filter(|l| l.ends_with("FAIL")).collect();
    assert_eq!(failed.len(), 2, "{text}");
    assert!(failed.iter().all(|l| l.contains("balance")));
}

#[test]
fn verify_with_scenario_checks_its_regions() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "w.json",
        r#"{"scenario": "infinite_well", "dt_factor": 1.2, "geometry": {"cells": 4}}"#,
    );
    let o = fdtdq(&["verify", "--config", cfg.to_str().unwrap()], 1);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(o.status.code(), Some(exit::OK), "{text}");
    assert!(text.contains("well: P definiteness at run dt"));
}
