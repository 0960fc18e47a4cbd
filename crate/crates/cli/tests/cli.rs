use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use qls_cli::config::RunConfig;
use qls_cli::run::RunReport;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn qls(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_qls")).args(args).output().expect("spawn qls");
    if !out.stderr.is_empty() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.code().expect("exit code")
}

fn run_fixture(name: &str, extra: &[&str]) -> (i32, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(name);
    let mut args = vec!["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()];
    args.extend_from_slice(extra);
    (qls(&args), dir)
}

fn report(dir: &Path) -> RunReport {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn flat_analysis_gives_four_r() {
    let (code, dir) = run_fixture("flat.toml", &[]);
    assert_eq!(code, 0);
    let r = report(dir.path());
    let trap = r.analysis.unwrap().trap;
    assert!(!trap.trapped);
    assert!((trap.l - 32.0).abs() <= 0.32, "L = {}", trap.l);
}

#[test]
fn ray_dump_has_one_row_per_ray() {
    let (code, dir) = run_fixture("ring_well.toml", &[]);
    assert_eq!(code, 0);
    let trap = report(dir.path()).analysis.unwrap().trap;
    assert!(trap.trapped);
    let rows = csv::Reader::from_path(dir.path().join("rays.csv")).unwrap().records().count();
    assert_eq!(rows, trap.rays);
}

#[test]
fn verify_suite_passes() {
    let (code, dir) = run_fixture("flat.toml", &["--mode", "verify"]);
    assert_eq!(code, 0);
    let r = report(dir.path());
    assert!(r.verdicts.len() >= 7);
    assert!(r.verdicts.iter().all(|v| v.passed));
}

#[test]
fn small_quadratic_solve_converges() {
    let (code, dir) = run_fixture("small_quadratic.toml", &[]);
    assert_eq!(code, 0);
    let s = report(dir.path()).solve.unwrap();
    assert!(s.converged);
    assert!(s.trace.records.last().unwrap().diff_x0 <= 1e-8);
    let rows = csv::Reader::from_path(dir.path().join("iterations.csv")).unwrap().records().count();
    assert_eq!(rows, s.trace.records.len());
}

#[test]
fn small_cubic_solve_converges() {
    let (code, dir) = run_fixture("small_cubic.toml", &[]);
    assert_eq!(code, 0);
    assert!(report(dir.path()).solve.unwrap().converged);
}

#[test]
fn report_json_round_trips() {
    let (_, dir) = run_fixture("small_quadratic.toml", &[]);
    let text = fs::read_to_string(dir.path().join("report.json")).unwrap();
    let r: RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&r).unwrap(), text);
}

#[test]
fn identical_runs_are_bit_identical() {
    let (_, a) = run_fixture("conformal_bump.toml", &["--seed", "3"]);
    let (_, b) = run_fixture("conformal_bump.toml", &["--seed", "3", "--threads", "1"]);
    // The echoed output directories differ; everything else must match to the bit.
    let text = |d: &Path| fs::read_to_string(d.join("report.json")).unwrap().replace(d.to_str().unwrap(), "OUT");
    assert_eq!(text(a.path()), text(b.path()));
}

#[test]
fn echoed_config_reruns_identically() {
    let (_, dir) = run_fixture("small_cubic.toml", &[]);
    let r = report(dir.path());
    let again = RunConfig::from_toml(&toml::to_string(&r.config).unwrap()).unwrap();
    assert_eq!(again, r.config);
    // Defaults that were not in the file are stamped into the echo.
    let text = fs::read_to_string(dir.path().join("report.json")).unwrap();
    for key in ["inner_tol", "kappa", "envelope_delta", "boundary_points", "cube_sum"] {
        assert!(text.contains(key), "{key} missing from the echo");
    }
}

#[test]
fn sweep_table_matches_delta_list() {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(fixture("small_quadratic.toml")).unwrap();
    let text = base
        .replace("t_values = [0.05, 0.025]", "t_values = []")
        .replace("resolutions = [512, 1024]", "resolutions = []")
        .replace("deltas = [1e-2, 1e-3, 1e-4]", "deltas = [1e-2, 1e-3]");
    let cfg = write_config(dir.path(), &text);
    let code = qls(&["--config", cfg.to_str().unwrap(), "--mode", "sweep", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    let mut rd = csv::Reader::from_path(dir.path().join("dependence.csv")).unwrap();
    let header = rd.headers().unwrap().clone();
    assert_eq!(header.len(), 3 + 2);
    let deltas: Vec<f64> = rd.records().map(|r| r.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(deltas, vec![1e-2, 1e-3]);
}

#[test]
fn schema_violations_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(fixture("flat.toml")).unwrap();
    for bad in [
        base.replace("schema_version = 1", "schema_version = 9"),
        base.replace("seed = 1", "seed = 1\nbogus = 3"),
        base.replace("n = 64", "n = 60"),
        format!("{base}\n[trap]\nkappa = 2.0\n"),
        format!("{base}\n[solver]\nno_such_key = 1\n"),
    ] {
        let cfg = write_config(dir.path(), &bad);
        assert_eq!(qls(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]), 2, "accepted:\n{bad}");
    }
}

#[test]
fn numerical_failure_exits_3_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    // Data too wide for any exterior radius inside the box.
    let text = fs::read_to_string(fixture("small_quadratic.toml")).unwrap().replace("width = 1.5", "width = 40.0");
    let cfg = write_config(dir.path(), &text);
    assert_eq!(qls(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]), 3);
    let r = report(dir.path());
    assert!(r.failure.is_some() && r.solve.is_none());
}
