use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mrtrader_cli::output::{csv_body, read_grids};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mrtrader"))
}

fn config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn model(kappa: &str, corr: &str, gamma: f64, horizon: f64, extra: &str) -> String {
    format!(
        r#"{{"model": {{"n": 2, "kappa": {kappa}, "sigma": [1, 1], "theta": [0, 0], "corr": {corr}}},
            "gamma": {gamma}, "horizon": {horizon}{extra}}}"#
    )
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--output-dir")
        .arg(out)
        .output()
        .unwrap()
}

fn rows(path: &Path) -> Vec<Vec<f64>> {
    csv_body(&fs::read_to_string(path).unwrap())
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect()
}

#[test]
fn validate_reports_each_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let ok = config(
        dir.path(),
        "ok.json",
        &model("[1, 0.5]", "[[1, 0.7], [0.7, 1]]", -4.0, 3.0, ""),
    );
    let out = run(&["validate"], &ok, dir.path());
    assert_eq!(out.status.code(), Some(0));

    let singular = config(
        dir.path(),
        "s.json",
        &model("[1, 0.5]", "[[1, 1], [1, 1]]", -4.0, 3.0, ""),
    );
    let out = run(&["validate"], &singular, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NotPositiveDefinite"));

    let still = config(
        dir.path(),
        "z.json",
        &model("[0, 0]", "[[1, 0], [0, 1]]", -4.0, 3.0, ""),
    );
    let out = run(&["validate"], &still, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("AllKappaZero"));

    let gamma = config(
        dir.path(),
        "g.json",
        &model("[1, 0.5]", "[[1, 0], [0, 1]]", 1.0, 3.0, ""),
    );
    assert_eq!(run(&["validate"], &gamma, dir.path()).status.code(), Some(1));
}

#[test]
fn missing_inputs_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("solve").arg("--output-dir").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["solve"], &dir.path().join("absent.json"), dir.path());
    assert_eq!(out.status.code(), Some(3));
    let bad = config(dir.path(), "bad.json", "{not json");
    assert_eq!(run(&["solve"], &bad, dir.path()).status.code(), Some(1));
    assert_eq!(bin().arg("nonsense").output().unwrap().status.code(), Some(1));
}

#[test]
fn solve_starts_at_myopic_feedback() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "c.json",
        &model("[1, 0.5]", "[[1, 0.7], [0.7, 1]]", -4.0, 3.0, ""),
    );
    let out = run(&["solve"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let d = rows(&dir.path().join("d_solution.csv"));
    // δΘ⁻¹κ with δ = 0.2, ρ = 0.7
    let det = 1.0 - 0.49;
    let expect = [0.2 / det, -0.2 * 0.7 * 0.5 / det, -0.2 * 0.7 / det, 0.2 * 0.5 / det];
    assert_eq!(d[0][0], 0.0);
    for (got, want) in d[0][1..5].iter().zip(expect) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    assert!(rows(&dir.path().join("a_solution.csv")).len() > 2);
}

#[test]
fn log_utility_feedback_rows_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "c.json",
        &model("[1, 0.5]", "[[1, 0.4], [0.4, 1]]", 0.0, 3.0, ""),
    );
    assert_eq!(run(&["solve"], &cfg, dir.path()).status.code(), Some(0));
    let d = rows(&dir.path().join("d_solution.csv"));
    for r in &d {
        assert_eq!(&r[1..5], &d[0][1..5]);
    }
}

#[test]
fn blow_up_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    // one stationary asset, δ = 2, ρ = 0.9: the feedback is singular before τ = 0.9
    let cfg = config(
        dir.path(),
        "c.json",
        &model("[1, 0]", "[[1, 0.9], [0.9, 1]]", 0.5, 3.0, ""),
    );
    let out = run(&["solve"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("BlowUpDetected"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("error.json")).unwrap()).unwrap();
    let tau = report["tau"].as_f64().unwrap();
    assert!(tau > 0.8 && tau < 0.9, "tau = {tau}");
    assert_eq!(report["code"], "BlowUpDetected");
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let extra = r#", "simulate": {"n_paths": 1, "initial_state": [0.5, -0.3], "record_paths": 1}"#;
    let cfg = config(
        dir.path(),
        "c.json",
        &model("[1, 0.5]", "[[1, 0.7], [0.7, 1]]", -4.0, 1.0, extra),
    );
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        assert_eq!(run(&["simulate"], &cfg, out).status.code(), Some(0));
    }
    for f in ["simulation.csv", "paths.csv", "simulation_summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let out = bin()
        .args(["simulate", "--seed", "99", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&c)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let first = fs::read_to_string(a.join("simulation.csv")).unwrap();
    let other = fs::read_to_string(c.join("simulation.csv")).unwrap();
    assert!(other.contains("# seed: 99"));
    assert_ne!(csv_body(&first), csv_body(&other));
}

#[test]
fn misspec_truth_cell_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let extra = r#", "misspec": {"axis1": [0.5, 1.0, 2.0], "axis2": [0.5, 1.0, 2.0]}"#;
    let cfg = config(
        dir.path(),
        "c.json",
        &model("[1, 0.5]", "[[1, 0.7], [0.7, 1]]", -4.0, 3.0, extra),
    );
    let out = run(&["misspec", "--plot"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let grids = read_grids(&dir.path().join("misspec.csv")).unwrap();
    assert_eq!(grids[0].quantity, "delta_value");
    assert_eq!(grids[1].quantity, "sharpe");
    assert!(grids[0].get(1, 1).abs() < 1e-8);
    let (n1, n2) = grids[0].shape();
    for i in 0..n1 {
        for j in 0..n2 {
            let v = grids[0].get(i, j);
            assert!(v.is_nan() || v <= 1e-8);
        }
    }
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("misspec.missing.json")).unwrap()).unwrap();
    assert_eq!(
        sidecar["count"].as_u64().unwrap() as usize,
        grids[0].missing_count() + grids[1].missing_count()
    );
    assert!(dir.path().join("misspec.svg").exists());
}

#[test]
fn outputs_stay_in_output_dir() {
    let work = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg_dir = tempfile::tempdir().unwrap();
    let extra =
        r#", "corr_sweep": {"rho": [-0.5, 0.0, 0.5]}, "kappa_sweep": {"kappa2": [0.5, 1.0], "rho": [0.0, 0.9]}"#;
    let cfg = config(
        cfg_dir.path(),
        "c.json",
        &model("[1, 0.5]", "[[1, 0], [0, 1]]", -4.0, 2.0, extra),
    );
    for cmd in ["solve", "positions", "corr-sweep", "kappa-sweep"] {
        let status = bin()
            .current_dir(work.path())
            .args([cmd, "--plot", "--config"])
            .arg(&cfg)
            .arg("--output-dir")
            .arg(out.path())
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0), "{cmd}");
    }
    assert_eq!(fs::read_dir(work.path()).unwrap().count(), 0);
    assert_eq!(fs::read_dir(cfg_dir.path()).unwrap().count(), 1);
    for f in [
        "corr_sensitivity.json",
        "corr_sweep.csv",
        "d_curve.svg",
        "value_kappa2_rho.csv",
        "positions.csv",
    ] {
        assert!(out.path().join(f).exists(), "{f}");
    }
}

#[test]
fn model_file_resolves_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("cfg")).unwrap();
    config(
        &dir.path().join("cfg"),
        "m.json",
        r#"{"n": 1, "kappa": [0.8], "sigma": [2], "theta": [10], "corr": [[1]]}"#,
    );
    let cfg = config(
        &dir.path().join("cfg"),
        "c.json",
        r#"{"model": "m.json", "gamma": -2, "horizon": 1, "positions": {"state": [12], "times": [0, 1]}}"#,
    );
    let out = run(&["positions"], &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = rows(&dir.path().join("out/positions.csv"));
    // at t = T the feedback is δκ: α = w δκ (θ - x) / σ²
    let delta = 1.0 / 3.0;
    assert!((r[1][1] - delta * 0.8 * (10.0 - 12.0) / 4.0).abs() < 1e-12);
}

#[test]
fn verify_exit_status_follows_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "c.json",
        &model(
            "[1, 0.5]",
            "[[1, 0], [0, 1]]",
            -4.0,
            3.0,
            r#", "verify": {"monte_carlo": false}"#,
        ),
    );
    let out = run(&["verify"], &cfg, dir.path());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    let all = report["all_passed"].as_bool().unwrap();
    assert_eq!(out.status.code(), Some(if all { 0 } else { 1 }));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for c in [1, 2, 3, 4, 7, 8, 9, 10, 11, 12] {
        assert!(stdout.contains(&format!("criterion {c}\n")), "{stdout}");
    }
}
