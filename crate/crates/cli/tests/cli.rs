use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use linkedcox::montecarlo::{parse_csv_table, SimReport};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linkedcox"))
        .args(args)
        .env_remove("LINKEDCOX_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn generate(dir: &Path, name: &str, mechanism: &str, n: &str) -> PathBuf {
    let path = dir.join(name);
    let out = run(&[
        "generate", "--scenario", "td-changepoint", "--mechanism", mechanism, "--n", n, "--seed", "7", "--latent",
        "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn fit(data: &Path, method: &str, extra: &[&str]) -> Value {
    let mut args = vec!["fit", "--data", data.to_str().unwrap(), "--method", method];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    stdout_json(&out)
}

fn vector(report: &Value, key: &str) -> Vec<f64> {
    let v = if key == "beta" { &report["cox"]["beta_hat"] } else { &report[key] };
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn oracle_and_iplw_agree_within_joint_standard_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "clar.csv", "clar", "2000");
    let cp = ["--change-points", "5"];
    let oracle = fit(&data, "oracle", &cp);
    let iplw = fit(&data, "iplw", &cp);
    assert_eq!(oracle["parameters"], serde_json::json!(["z1_1", "z1_2", "z1_1:t>5"]));
    let (bo, so) = (vector(&oracle, "beta"), vector(&oracle, "se"));
    let (bi, si) = (vector(&iplw, "beta"), vector(&iplw, "se"));
    for j in 0..3 {
        let joint = (so[j].powi(2) + si[j].powi(2)).sqrt();
        assert!((bo[j] - bi[j]).abs() < 3.0 * joint, "coefficient {j}: {} vs {}", bo[j], bi[j]);
    }
    assert!(iplw["gamma_hat"].is_array());
}

/// Drops every unlinked subject censored in the trial (`l = 0, q = 0`).
fn without_class3(src: &Path, dst: &Path) {
    let text = std::fs::read_to_string(src).unwrap();
    let kept: Vec<&str> = text
        .lines()
        .enumerate()
        .filter(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            *i == 0 || !(f[1] == "0" && f[2] == "0")
        })
        .map(|(_, l)| l)
        .collect();
    std::fs::write(dst, kept.join("\n") + "\n").unwrap();
}

#[test]
fn iplw_without_missing_outcomes_matches_ccplus() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "full.csv", "clar", "1000");
    let trimmed = dir.path().join("trimmed.csv");
    without_class3(&data, &trimmed);
    let iplw = vector(&fit(&trimmed, "iplw", &[]), "beta");
    let ccplus = vector(&fit(&trimmed, "ccplus", &[]), "beta");
    for (a, b) in iplw.iter().zip(&ccplus) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn missing_column_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.csv", "lcar", "50");
    let text = std::fs::read_to_string(&data).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let drop = header.iter().position(|h| *h == "c1").unwrap();
    let stripped: String = text
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(drop);
            f.join(",") + "\n"
        })
        .collect();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, stripped).unwrap();
    let out = run(&["fit", "--data", bad.to_str().unwrap(), "--method", "cc"]);
    assert_eq!(code(&out), 2);
    let err = stdout_json(&out);
    assert_eq!(err["exit_code"], 2);
    assert!(err["message"].as_str().unwrap().contains("c1"), "{err}");
}

#[test]
fn constant_covariate_is_singular() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.csv", "lcar", "300");
    let out = run(&["fit", "--data", data.to_str().unwrap(), "--method", "oracle", "--cox-covariates", "z1_1,z1_1"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("r.json");
    let out = dir.path().to_str().unwrap();
    for args in [
        vec!["simulate", "--scenario", "td-changepoint", "--mechanism", "clar", "--seed", "1", "--reps", "0", "--out", out],
        vec!["simulate", "--scenario", "td-changepoint", "--mechanism", "clar", "--reps", "3", "--out", out],
        vec!["fit", "--data", "x.csv", "--method", "magic"],
        vec!["report", "--input", out_path.to_str().unwrap(), "--format", "yaml"],
        vec!["simulate", "--scenario", "gap", "--mechanism", "lcar", "--analysis", "misspecified", "--seed", "1", "--out", out],
    ] {
        let result = run(&args);
        assert_eq!(code(&result), 1, "{args:?}: {}", String::from_utf8_lossy(&result.stderr));
    }
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn missing_data_file_is_a_parse_error() {
    let out = run(&["fit", "--data", "/nonexistent/data.csv", "--method", "oracle"]);
    assert_eq!(code(&out), 2);
}

fn simulate(dir: &Path, name: &str, threads: &str) -> PathBuf {
    let path = dir.join(name);
    let out = run(&[
        "simulate", "--scenario", "td-changepoint", "--mechanism", "clar", "--n", "300", "--reps", "12", "--seed", "3",
        "--threads", threads, "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("| CLAR | Oracle |"));
    path
}

#[test]
fn simulate_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = std::fs::read(simulate(dir.path(), "a.json", "1")).unwrap();
    let b = std::fs::read(simulate(dir.path(), "b.json", "2")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn report_csv_round_trips_the_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), "r.json", "1");
    let report: SimReport = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let out = run(&["report", "--input", path.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(code(&out), 0);
    let rows = parse_csv_table(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(rows.len(), report.results.len());
    for (row, summary) in rows.iter().zip(&report.results) {
        assert_eq!(row.method, summary.method.name());
        assert_eq!(row.bias, summary.bias);
        assert_eq!(row.coverage, summary.coverage);
        assert_eq!(row.mean_se, summary.mean_se);
    }
    let md = run(&["report", "--input", path.to_str().unwrap()]);
    assert_eq!(code(&md), 0);
    assert!(String::from_utf8_lossy(&md.stdout).starts_with("| Mechanism |"));
}

#[test]
fn report_rejects_non_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.json");
    std::fs::write(&path, "{\"hello\": 1}").unwrap();
    let out = run(&["report", "--input", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert_eq!(stdout_json(&out)["error"], "SchemaError");
}
