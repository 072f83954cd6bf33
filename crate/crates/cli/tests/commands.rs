use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn scendec(args: &[&str], outdir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scendec"))
        .args(args)
        .arg("--outdir")
        .arg(outdir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&read(dir, "manifest.json")).unwrap()
}

#[test]
fn deterministic_qp_needs_no_iterations() {
    let dir = TempDir::new().unwrap();
    let out = scendec(
        &["run-qp", "--input", "builtin:example-qp-deterministic"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(dir.path());
    assert_eq!(m["iterations"], 0);
    assert_eq!(m["converged"], true);
    let horizon = m["horizon"].as_u64().unwrap() as usize;
    assert_eq!(
        read(dir.path(), "controls.csv").lines().count(),
        horizon + 1
    );
}

#[test]
fn check_lq_agrees_on_the_separable_example() {
    let dir = TempDir::new().unwrap();
    let out = scendec(
        &["check-lq", "--input", "builtin:example-qp-separable"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(dir.path());
    assert!(m["summary"]["max_control_gap"].as_f64().unwrap() <= 1e-6);
    assert_eq!(m["summary"]["distance_increases"], 0.0);
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let text = scendec_cli::read_input("builtin:example-qp").unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["problem"]["horizn"] = serde_json::json!(3);
    let file = dir.path().join("bad.json");
    std::fs::write(&file, value.to_string()).unwrap();
    let out = scendec(
        &["run-qp", "--input", file.to_str().unwrap()],
        &dir.path().join("out"),
    );
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn inapplicable_flag_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = scendec(
        &["run-qp", "--input", "builtin:example-qp", "--w", "1"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_result_directory_is_a_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_scendec"))
        .args(["run-qp", "--input", "builtin:example-qp"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn iteration_cap_reports_non_convergence_after_writing() {
    let dir = TempDir::new().unwrap();
    let out = scendec(
        &["run-qp", "--input", "builtin:example-qp", "--max-iter", "3"],
        dir.path(),
    );
    assert_eq!(code(&out), 3);
    assert_eq!(manifest(dir.path())["converged"], false);
    assert!(dir.path().join("controls.csv").exists());
}

#[test]
fn outputs_do_not_depend_on_runs_or_threads() {
    let dirs: Vec<TempDir> = (0..3).map(|_| TempDir::new().unwrap()).collect();
    for (dir, jobs) in dirs.iter().zip(["1", "1", "4"]) {
        let out = scendec(
            &["run-qp", "--input", "builtin:example-qp", "--jobs", jobs],
            dir.path(),
        );
        assert_eq!(code(&out), 0);
    }
    for name in ["controls.csv", "controls_view.csv", "iterations.csv"] {
        let first = read(dirs[0].path(), name);
        for dir in &dirs[1..] {
            assert_eq!(read(dir.path(), name), first, "{name}");
        }
    }
}

#[test]
fn flat_market_holds_nothing_risky() {
    let dir = TempDir::new().unwrap();
    let out = scendec(
        &["run-utility", "--input", "builtin:example-utility-flat"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let controls = read(dir.path(), "controls.csv");
    for line in controls.lines().skip(1) {
        for field in line.split(',').skip(3) {
            assert_eq!(field.parse::<f64>().unwrap(), 0.0, "{line}");
        }
    }
    let stats = read(dir.path(), "stats.csv");
    assert!(stats.starts_with("stage,benchmark,mean,variance,bankruptcy_rate,worst"));
}

#[test]
fn mean_variance_run_writes_the_lambda_grid() {
    let dir = TempDir::new().unwrap();
    let out = scendec(
        &["run-mv", "--input", "builtin:example-mv", "--diagnostics"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let grid = read(dir.path(), "lambda_grid.csv");
    let mut lines = grid.lines();
    assert_eq!(
        lines.next(),
        Some("lambda,objective,iterations,converged,source")
    );
    assert!(lines.count() >= 3);
    let m = manifest(dir.path());
    let lambda = &m["lambda"];
    let star = lambda["star"].as_f64().unwrap();
    assert!(lambda["min"].as_f64().unwrap() <= star && star <= lambda["max"].as_f64().unwrap());
    assert!(m["diagnostics"]["nonanticipativity_gap"].as_f64().unwrap() <= 1e-9);
    assert!(read(dir.path(), "stats.csv")
        .lines()
        .next()
        .unwrap()
        .contains("mv_mean"));
}
