use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sparse_quantile::io::read_csv;
use sparse_quantile::mio::solve_enumeration;
use sparse_quantile::select::lambda_from_c;
use sparse_quantile::QuantileLevel;

const DATA: &str = "tests/fixtures/small.csv";

fn sqr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqr"))
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn fit_matches_golden_output() {
    let out = sqr(&["fit", "--data", DATA, "--method", "l0pqr", "--tau", "0.5", "--c", "1.0"]);
    assert!(out.status.success());
    let golden = std::fs::read_to_string(fixture("fit_l0pqr_c1.json")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim_end(), golden.trim_end());
}

#[test]
fn golden_support_is_the_exact_optimum() {
    let golden: Value = serde_json::from_str(&std::fs::read_to_string(fixture("fit_l0pqr_c1.json")).unwrap()).unwrap();
    let d = read_csv(fixture("small.csv"), "y").unwrap();
    let lambda = lambda_from_c(1.0, &d);
    assert_eq!(golden["lambda"].as_f64().unwrap(), lambda);
    let exact = solve_enumeration(&d, QuantileLevel::new(0.5).unwrap(), lambda, d.p()).unwrap();
    let support: Vec<usize> = golden["fit"]["support"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    assert_eq!(support, exact.support);
    let obj = golden["fit"]["obj_penalized"].as_f64().unwrap();
    assert!(obj >= exact.obj_penalized - 1e-9);
    assert!(obj - exact.obj_penalized <= 1e-4 * exact.obj_penalized.max(1.0));
}

#[test]
fn seeded_runs_are_identical() {
    let args = ["fit", "--data", DATA, "--method", "l1pqr", "--c", "0.5", "--seed", "7"];
    let a = sqr(&args);
    let b = sqr(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    assert_eq!(v["config"]["seed"], 7);
    assert_eq!(v["method"], "l1pqr");
}

#[test]
fn exact_solvers_agree() {
    let bnb = json(&sqr(&["exact", "--data", DATA, "--c", "0.3"]));
    let en = json(&sqr(&["exact", "--data", DATA, "--c", "0.3", "--solver", "enumerate"]));
    assert_eq!(bnb["status"], "optimal");
    assert_eq!(bnb["fit"]["support"], en["fit"]["support"]);
    let (a, b) = (bnb["fit"]["obj_penalized"].as_f64().unwrap(), en["fit"]["obj_penalized"].as_f64().unwrap());
    assert!((a - b).abs() <= 1e-6 * b.max(1.0));
}

#[test]
fn lp_export_and_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let lp = dir.path().join("model.lp");
    let out = dir.path().join("exact.json");
    let run = sqr(&[
        "exact", "--data", DATA, "--lambda", "0.05", "--k0", "3",
        "--lp-out", lp.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    assert!(run.stdout.is_empty());
    let text = std::fs::read_to_string(&lp).unwrap();
    assert!(text.lines().any(|l| l == "Minimize"));
    assert!(text.contains("Binaries"));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["k0"], 3);
    assert!(v["fit"]["support"].as_array().unwrap().len() <= 3);
}

#[test]
fn tune_writes_risk_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("risk.csv");
    let v = json(&sqr(&["tune", "--data", DATA, "--method", "l0cqr", "--restarts", "5", "--table", table.to_str().unwrap()]));
    let csv = std::fs::read_to_string(&table).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "candidate,validation_risk,sparsity,error");
    assert_eq!(csv.lines().count(), 1 + 7);
    let q = v["candidate"].as_f64().unwrap();
    assert_eq!(v["fit"]["support"].as_array().unwrap().len() as f64, q);
}

#[test]
fn simulate_config_emits_summary_csv() {
    let dir = tempfile::tempdir().unwrap();
    let jsonl = dir.path().join("rows.jsonl");
    let run = sqr(&["simulate", "--config", "tests/fixtures/table1_small.cfg", "--jsonl", jsonl.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = String::from_utf8(run.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,replications,corr_sel,orac_sel,num_irrel,avg_sparsity,param_error,fit_error,in_rr,out_rr,hamming"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("l0pqr,3,") && rows[1].starts_with("l1pqr,3,"));
    for r in &rows {
        assert_eq!(r.split(',').count(), 11);
    }
    assert_eq!(std::fs::read_to_string(&jsonl).unwrap().lines().count(), 6);
    let again = sqr(&["simulate", "--config", "tests/fixtures/table1_small.cfg"]);
    assert_eq!(again.stdout, text.as_bytes());
}

#[test]
fn flags_override_the_config_file() {
    let run = sqr(&["simulate", "--config", "tests/fixtures/table1_small.cfg", "--reps", "1"]);
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("l0pqr,1,"));
}

#[test]
fn conformal_reports_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let iv = dir.path().join("iv.csv");
    let v = json(&sqr(&["conformal", "--data", DATA, "--method", "l1pqr", "--splits", "2", "--intervals", iv.to_str().unwrap()]));
    let splits = v["splits"].as_array().unwrap();
    assert_eq!(splits.len(), 2);
    assert_eq!(splits[0]["sizes"], serde_json::json!([15, 15, 15, 15]));
    let cov = v["mean_coverage"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&cov));
    let csv = std::fs::read_to_string(&iv).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "lower,upper,covered");
    assert_eq!(csv.lines().count(), 16);
}

fn error_of(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr).lines().last().unwrap().to_string();
    serde_json::from_str(&line).expect("last stderr line is a JSON error record")
}

#[test]
fn failures_map_to_exit_codes() {
    let cases: [(&[&str], i32, &str); 6] = [
        (&["fit", "--data", "missing.csv", "--c", "1"], 4, "io"),
        (&["fit", "--data", DATA, "--tau", "1.5", "--c", "1"], 3, "config"),
        (&["fit", "--data", DATA, "--method", "l0cqr"], 3, "config"),
        (&["fit", "--data", DATA, "--method", "bogus", "--c", "1"], 3, "config"),
        (&["fit", "--data", DATA, "--response", "nope", "--c", "1"], 6, "input"),
        (&["fit", "--data", "tests/fixtures/table1_small.cfg", "--c", "1"], 5, "data"),
    ];
    for (args, code, kind) in cases {
        let out = sqr(args);
        assert_eq!(out.status.code(), Some(code), "{args:?}");
        let e = error_of(&out);
        assert_eq!(e["error"]["kind"], kind, "{args:?}");
        assert_eq!(e["error"]["exit_code"], code);
    }
}

#[test]
fn time_limit_exit_code_still_writes_output() {
    let out = sqr(&["exact", "--data", DATA, "--c", "0.01", "--time-limit", "0.000001"]);
    assert_eq!(out.status.code(), Some(9));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "time_limit");
    assert!(v["fit"]["gap"].as_f64().unwrap() > 0.0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(sqr(&["fit", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(sqr(&[]).status.code(), Some(2));
}
