use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use margnorm_cli::output::{read_numeric_csv, read_potentials_csv};
use margnorm_core::{l2_potentials, residual_norms, sample_marginal, MarginalSpec, Mesh};
use serde_json::Value;
use tempfile::TempDir;

fn margnorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_margnorm")).args(args).output().unwrap()
}

fn gaussian(mu: f64) -> String {
    format!(r#"{{"kind": "gaussian", "mu": {mu}, "sigma2": 0.1}}"#)
}

const UNIFORM: &str = r#"{"kind": "uniform"}"#;

fn write_config(dir: &Path, name: &str, m: usize, marginals: &[String], targets: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    let text = format!(
        r#"{{"n": {}, "m": {m}, "marginals": [{}], "p_targets": {targets}{extra}, "out_dir": "{}"}}"#,
        marginals.len(),
        marginals.join(", "),
        dir.join(format!("{name}.out")).display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn column_range(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    max - min
}

#[test]
fn solve_uniform_bound_is_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "u.json", 12, &[UNIFORM.into(), UNIFORM.into()], "[3.0]", "");
    let out = tmp.path().join("solve");
    let res = margnorm(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let summary = json(&out.join("summary.json"));
    assert!((summary["bound"].as_f64().unwrap() - 1.0).abs() <= 1e-9);
    for key in ["p", "n", "m", "bound", "residual_inf", "gauge_inf", "iterations", "converged"] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn solve_at_two_writes_closed_form() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "r1.json", 30, &[gaussian(0.5), gaussian(0.5)], "[2.0]", "");
    let out = tmp.path().join("solve");
    let res = margnorm(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let pot = read_potentials_csv(&out.join("potentials_p2.csv"), 2.0).unwrap();
    let mesh = Mesh::new(2, 30).unwrap();
    let g = vec![sample_marginal(&MarginalSpec::gaussian(0.5, 0.1), &mesh).unwrap(); 2];
    assert_eq!(pot, l2_potentials(&g).unwrap().potentials);
}

#[test]
fn malformed_config_exits_one_naming_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"n": 2, "marginals": [], "p_targets": [2.0], "out_dir": "x"}"#).unwrap();
    let res = margnorm(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing field `m`"));
    let res = margnorm(&["solve"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn sweep_row_one_and_round_trip() {
    let tmp = TempDir::new().unwrap();
    let targets = "[1.2, 1.4, 1.6, 1.8, 2.0, 2.2, 2.4, 2.6, 2.8, 3.0]";
    let cfg = write_config(tmp.path(), "r1.json", 30, &[gaussian(0.5), gaussian(0.5)], targets, "");
    let out = tmp.path().join("sweep");
    let res = margnorm(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let index = json(&out.join("index.json"));
    let runs = index["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 10);

    let mesh = Mesh::new(2, 30).unwrap();
    let g = vec![sample_marginal(&MarginalSpec::gaussian(0.5, 0.1), &mesh).unwrap(); 2];
    let mut ranges = Vec::new();
    for run in runs {
        let p = run["p"].as_f64().unwrap();
        let pot = read_potentials_csv(&out.join(run["file"].as_str().unwrap()), p).unwrap();
        let (marg, _) = residual_norms(&pot, &g, &mesh).unwrap();
        assert!((marg - run["residual_inf"].as_f64().unwrap()).abs() <= 1e-12);
        assert!(run["converged"].as_bool().unwrap());
        ranges.push(column_range(pot.phi(0)));
    }
    assert!(ranges.windows(2).all(|w| w[0] < w[1]), "{ranges:?}");

    let long = read_numeric_csv(&out.join("sweep_long.csv")).unwrap();
    assert_eq!(long.header, ["p", "axis", "xi", "phi"]);
    assert_eq!(long.columns[0].len(), 10 * 2 * 30);
}

#[test]
fn sweep_with_uniform_first_marginal_has_constant_phi1() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "r3.json", 30, &[UNIFORM.into(), gaussian(0.5)], "[1.2, 1.6, 2.4, 3.0]", "");
    let out = tmp.path().join("sweep");
    assert_eq!(margnorm(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(0));
    for p in ["1.2", "1.6", "2.4", "3"] {
        let t = read_numeric_csv(&out.join(format!("potentials_p{p}.csv"))).unwrap();
        assert!(column_range(&t.columns[1]) <= 1e-6);
    }
}

#[test]
fn single_target_sweep_matches_solve_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "r2.json", 20, &[gaussian(1.0 / 3.0), gaussian(2.0 / 3.0)], "[2.7]", "");
    let cfg = cfg.to_str().unwrap();
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    assert_eq!(margnorm(&["solve", "--config", cfg, "--out", dirs[0].to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(margnorm(&["sweep", "--config", cfg, "--out", dirs[1].to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(margnorm(&["solve", "--config", cfg, "--out", dirs[2].to_str().unwrap()]).status.code(), Some(0));
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&dirs[0], "potentials_p2.7.csv"), read(&dirs[1], "potentials_p2.7.csv"));
    assert_eq!(read(&dirs[0], "potentials_p2.7.csv"), read(&dirs[2], "potentials_p2.7.csv"));
    assert_eq!(read(&dirs[0], "summary.json"), read(&dirs[2], "summary.json"));
}

#[test]
fn non_convergence_exits_two_and_still_writes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "hard.json",
        20,
        &[gaussian(0.3), gaussian(0.7)],
        "[3.0]",
        r#", "solver": {"max_iter": 1, "delta_p": 1.0}"#,
    );
    let out = tmp.path().join("o");
    let res = margnorm(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(json(&out.join("summary.json"))["converged"], Value::Bool(false));
    assert!(out.join("potentials_p3.csv").exists());
}

#[test]
fn verify_passes_and_negative_control_fails() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "v.json", 8, &[gaussian(1.0 / 3.0), gaussian(2.0 / 3.0)], "[2.0, 3.0]", "");
    let cfg = cfg.to_str().unwrap();
    let out = tmp.path().join("v");
    let res = margnorm(&["verify", "--config", cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let report = json(&out.join("verify_report.json"));
    assert_eq!(report["passed"], Value::Bool(true));
    for run in report["runs"].as_array().unwrap() {
        let checks = run["checks"].as_array().unwrap();
        let oracle = checks.iter().find(|c| c["name"] == "oracle_density").unwrap();
        let limit = if run["p"].as_f64() == Some(2.0) { 1e-8 } else { 1e-4 };
        assert!(oracle["value"].as_f64().unwrap() <= limit);
    }

    let out = tmp.path().join("bad");
    let res = margnorm(&["verify", "--config", cfg, "--out", out.to_str().unwrap(), "--corrupt"]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("marginal_feasibility"));
    assert_eq!(json(&out.join("verify_report.json"))["passed"], Value::Bool(false));
}

fn write_payoff(path: &Path, f: impl Fn(f64) -> f64) {
    let mut text = String::from("k,payoff\n");
    for j in 0..201 {
        let k = 2.0 * j as f64 / 200.0;
        text.push_str(&format!("{k:.16e},{:.16e}\n", f(k)));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn decompose_quadratic_linear_and_solver_payoffs() {
    let tmp = TempDir::new().unwrap();
    let quad = tmp.path().join("quad.csv");
    write_payoff(&quad, |k| k * k);
    let out = tmp.path().join("q");
    let res = margnorm(&["decompose", "--payoff", quad.to_str().unwrap(), "--k0", "1.0", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let d = json(&out.join("decomposition.json"));
    assert!(d["max_reconstruction_error"].as_f64().unwrap() <= 1e-12);
    assert!((d["columns"][0]["bond_units"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((d["columns"][0]["forward_units"].as_f64().unwrap() - 2.0).abs() < 1e-9);

    let lin = tmp.path().join("lin.csv");
    write_payoff(&lin, |k| 0.5 + 3.0 * k);
    let out = tmp.path().join("l");
    assert_eq!(margnorm(&["decompose", "--payoff", lin.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let w = read_numeric_csv_lossy(&out.join("weights.csv"));
    assert!(w.iter().all(|units| units.abs() < 1e-9));

    let cfg = write_config(tmp.path(), "s.json", 30, &[gaussian(0.5), gaussian(0.4)], "[2.5]", "");
    let sol = tmp.path().join("sol");
    assert_eq!(margnorm(&["solve", "--config", cfg.to_str().unwrap(), "--out", sol.to_str().unwrap()]).status.code(), Some(0));
    let out = tmp.path().join("s");
    let res = margnorm(&["decompose", "--payoff", sol.join("potentials_p2.5.csv").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let d = json(&out.join("decomposition.json"));
    assert_eq!(d["columns"].as_array().unwrap().len(), 2);
    assert!(d["max_reconstruction_error"].as_f64().unwrap() <= 1e-10);

    let res = margnorm(&["decompose", "--payoff", quad.to_str().unwrap(), "--k0", "5.0", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    let garbage = tmp.path().join("garbage.csv");
    std::fs::write(&garbage, "k,payoff\n1,abc\n").unwrap();
    assert_eq!(margnorm(&["decompose", "--payoff", garbage.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(1));
}

/// Units column of a weights CSV, skipping the text columns.
fn read_numeric_csv_lossy(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|line| line.rsplit(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = margnorm_cli::config::ExperimentConfig::from_path(&path).unwrap();
        cfg.into_experiment(None).unwrap();
        seen += 1;
    }
    assert!(seen >= 4);
}
