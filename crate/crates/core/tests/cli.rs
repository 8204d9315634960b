use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use segp::harness::{read_results, ExperimentPlan};
use segp::inference::Dataset;
use serde_json::Value;

fn segp(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_segp")).args(args).env("SEGP_WORKERS", "1").output().expect("spawn segp");
    assert!(
        out.status.success(),
        "segp {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn simulate_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let trace = dir.path().join("trace.csv");
    segp(&["simulate", "--n", "60", "--d-n", "4", "--sigma", "0.3", "--seed", "5", "--out", path(&data)]);
    let ds = Dataset::read_csv(fs::File::open(&data).unwrap(), 0.3).unwrap();
    assert_eq!((ds.n(), ds.dim()), (60, 4));
    let header = fs::read_to_string(&data).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "x1,x2,x3,x4,y");

    let out = segp(&[
        "fit", "--data", path(&data), "--sigma", "0.3", "--iters", "300", "--burn-in", "100", "--chains", "2", "--seed",
        "1", "--trace", path(&trace),
    ]);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    let probs = summary["inclusion_probs"].as_array().unwrap();
    assert_eq!(probs.len(), 4);
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(&p.as_f64().unwrap())));
    let rate = summary["acceptance_rate"].as_f64().unwrap();
    assert!(rate > 0.0 && rate <= 1.0);

    let text = fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "chain,iter,gamma,log_a,log_marginal");
    assert_eq!(lines.count(), 2 * 300);
}

#[test]
fn fit_with_plugin_sigma_and_csv_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    segp(&["simulate", "--n", "40", "--d-n", "3", "--seed", "2", "--out", path(&data)]);
    let out = segp(&["fit", "--data", path(&data), "--plugin-sigma", "--iters", "50", "--burn-in", "10", "--chains", "1", "--emit", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("chain,iter,gamma,log_a,log_marginal"));
    assert_eq!(text.lines().count(), 51);
}

#[test]
fn fit_rejects_bad_header() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "a,b,y\n1,2,3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_segp"))
        .args(["fit", "--data", path(&data), "--sigma", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected 'x1'"));
}

#[test]
fn consistency_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = segp(&["consistency", "--print-plan", "--out", path(&dir.path().join("unused.csv"))]);
    let mut plan: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(serde_json::from_value::<ExperimentPlan>(plan.clone()).is_ok());
    plan["n_grid"] = serde_json::json!([40, 60, 80]);
    plan["d_n"] = serde_json::json!({"rule": "fixed", "value": 4});
    plan["replications"] = 2.into();
    plan["chains"] = 1.into();
    plan["iters"] = 200.into();
    plan["burn_in"] = 50.into();
    plan["l2_points"] = 500.into();
    let plan_path = dir.path().join("plan.json");
    fs::write(&plan_path, serde_json::to_vec_pretty(&plan).unwrap()).unwrap();

    let results = dir.path().join("results.csv");
    segp(&["consistency", "--plan", path(&plan_path), "--out", path(&results)]);
    let rows = read_results(fs::File::open(&results).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);
    let hash = &rows[0].config_hash;
    assert!(rows.iter().all(|r| &r.config_hash == hash && r.d_n == 4));

    // A second run appends without repeating the header.
    segp(&["consistency", "--plan", path(&plan_path), "--out", path(&results), "--seed", "3"]);
    let text = fs::read_to_string(&results).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("config_hash,")).count(), 1);
    assert_eq!(read_results(fs::File::open(&results).unwrap()).unwrap().len(), 12);

    let report_dir = dir.path().join("report");
    segp(&["report", "--results", path(&results), "--out-dir", path(&report_dir), "--bootstrap", "100"]);
    let trend = fs::read_to_string(report_dir.join("trend.csv")).unwrap();
    assert_eq!(
        trend.lines().next().unwrap(),
        "n,cells,median_prob_true_model,median_fp_mass,median_fn_mass,median_l2_error,eps_target"
    );
    assert_eq!(trend.lines().count(), 4);
    let report: Value = serde_json::from_str(&fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config_hashes"].as_array().unwrap().len(), 2);
    let slope = &report["slope"];
    assert!(slope["ci_low"].as_f64().unwrap() <= slope["slope"].as_f64().unwrap());
    assert_eq!(slope["grid_points"].as_u64(), Some(3));
}

#[test]
fn spectral_commands_emit_tables() {
    let out = segp(&["eigen", "--a", "2", "--gamma-size", "2", "--budget", "6", "--emit", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);

    let out = segp(&["rkhs", "--epsilon-grid", "0.1,0.01", "--target", "0.5,0.2"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().next().unwrap().starts_with("epsilon,m_star,tau"));
    assert_eq!(text.lines().count(), 3);

    let out = segp(&["smallball", "--epsilon", "0.3", "--samples", "20000", "--seed", "4"]);
    let est: Value = serde_json::from_slice(&out.stdout).unwrap();
    let p = est[0]["prob"].as_f64().unwrap();
    assert!(p > 0.0 && p < 1.0);

    let out = segp(&["prior-sample", "--d-n", "6", "--count", "5"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "draw,gamma,size,a");
    assert_eq!(text.lines().count(), 6);
}
