use cssl::{io, Matrix};
use std::path::Path;
use std::process::{Command, Output};

fn cssl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cssl")).args(args).env_remove("CSSL_WORKERS").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_fit_extract_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let fit = tmp.path().join("fit");
    let ext = tmp.path().join("ext");
    let out = cssl(&["generate", "--d", "10", "--n", "3", "--seed", "5", "--samples", "400", "--out", p(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = data.join("manifest.json");
    let out = cssl(&["fit", "--manifest", p(&manifest), "--alpha", "0.3", "--heuristic", "--p", "2", "--out", p(&fit)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let diag: serde_json::Value = io::read_json(fit.join("diagnostics.json")).unwrap();
    assert!(diag["scale_line"]["s1"].is_number());
    assert_eq!(diag["alpha"], 0.3);
    assert!(diag["converged"].as_bool().unwrap());
    for f in ["theta.csv", "omega_1.csv", "omega_3.csv", "lambda_2.csv"] {
        assert!(fit.join(f).exists(), "{f}");
    }
    let out = cssl(&["extract", "--dir", p(&fit), "--out", p(&ext)]);
    assert!(out.status.success());
    assert!(ext.join("edges.csv").exists() && ext.join("common_mask.csv").exists());
    let out = cssl(&["extract", "--dir", p(&fit), "--mode", "threshold", "--eps0", "0.5", "--out", p(&ext)]);
    assert!(out.status.success());
    let report: serde_json::Value = io::read_json(ext.join("extract.json")).unwrap();
    assert!(report["eps"].is_number());
    let out = cssl(&["evaluate", "--estimates", p(&fit), "--truth", p(&data)]);
    assert!(out.status.success());
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(metrics["f_measure"].as_f64().unwrap() >= 0.0);
}

#[test]
fn evaluate_truth_against_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(cssl(&["generate", "--d", "8", "--n", "2", "--out", p(&data)]).status.success());
    for i in 1..=2 {
        std::fs::copy(data.join(format!("precision_{i}.csv")), data.join(format!("lambda_{i}.csv"))).unwrap();
    }
    let report = tmp.path().join("m.json");
    assert!(cssl(&["evaluate", "--estimates", p(&data), "--truth", p(&data), "--out", p(&report)]).status.success());
    let m: serde_json::Value = io::read_json(&report).unwrap();
    assert_eq!(m["f_measure"], 1.0);
    assert_eq!(m["f0_measure"], 1.0);
}

fn single_covariance(dir: &Path) -> (std::path::PathBuf, Matrix) {
    let s = Matrix::from_row_slice(3, 3, &[2.0, 0.6, 0.1, 0.6, 1.5, -0.4, 0.1, -0.4, 1.0]);
    let cov = cssl::CovarianceSet::uniform(vec![s.clone()]).unwrap();
    (io::Manifest::save(dir, &cov).unwrap(), s)
}

#[test]
fn unpenalized_fit_inverts_the_covariance() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, s) = single_covariance(tmp.path());
    let fit = tmp.path().join("fit");
    let out = cssl(&["fit", "--manifest", p(&manifest), "--rho", "0", "--gamma", "inf", "--eps-gap", "1e-12", "--eps-pdgap", "1e-12", "--max-iter", "5000", "--out", p(&fit)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lam = io::read_matrix(fit.join("lambda_1.csv")).unwrap();
    let inv = s.try_inverse().unwrap();
    assert!((lam - inv).amax() <= 1e-4);
}

#[test]
fn iteration_cap_exits_two_with_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, _) = single_covariance(tmp.path());
    let fit = tmp.path().join("fit");
    let out = cssl(&["fit", "--manifest", p(&manifest), "--rho", "0.1", "--gamma", "0.2", "--max-iter", "1", "--out", p(&fit)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(fit.join("lambda_1.csv").exists() && fit.join("theta.csv").exists());
    let diag: serde_json::Value = io::read_json(fit.join("diagnostics.json")).unwrap();
    assert_eq!(diag["converged"], false);
    assert_eq!(diag["iterations"], 1);
}

#[test]
fn invalid_inputs_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, _) = single_covariance(tmp.path());
    let out = tmp.path().join("o");
    let missing = cssl(&["fit", "--manifest", "/nonexistent/m.json", "--rho", "1", "--gamma", "1", "--out", p(&out)]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(!missing.stderr.is_empty());
    let negative = cssl(&["fit", "--manifest", p(&manifest), "--rho", "-1", "--gamma", "1", "--out", p(&out)]);
    assert_eq!(negative.status.code(), Some(1));
    let no_hyper = cssl(&["fit", "--manifest", p(&manifest), "--out", p(&out)]);
    assert_eq!(no_hyper.status.code(), Some(1));
    assert_eq!(cssl(&["generate", "--d", "0", "--out", p(&out)]).status.code(), Some(1));
    assert_eq!(cssl(&["fit"]).status.code(), Some(1));
}

#[test]
fn heuristic_prints_the_scale_line() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(cssl(&["generate", "--d", "6", "--n", "3", "--out", p(&data)]).status.success());
    let out = cssl(&["heuristic", "--manifest", p(&data.join("manifest.json")), "--alpha", "0.2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let keys: Vec<&str> = text.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(keys, ["s0", "s1", "rho", "gamma"]);
    assert!(text.contains("gamma 2.0000000000000001e-1"));
}

#[test]
fn anomaly_scores_with_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let a = Matrix::identity(3, 3);
    let mut b = Matrix::identity(3, 3);
    b[(0, 1)] = 0.5;
    b[(1, 0)] = 0.5;
    io::write_matrix(tmp.path().join("a.csv"), &a).unwrap();
    io::write_matrix(tmp.path().join("b.csv"), &b).unwrap();
    io::write_text(tmp.path().join("labels.txt"), "1,1,0\n").unwrap();
    let csv = tmp.path().join("scores.csv");
    let out = cssl(&[
        "anomaly",
        "--a",
        p(&tmp.path().join("a.csv")),
        "--b",
        p(&tmp.path().join("b.csv")),
        "--labels",
        p(&tmp.path().join("labels.txt")),
        "--out",
        p(&csv),
    ]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "auc 1.0000000000000000e0");
    let text = io::read_text(&csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().nth(3).unwrap().ends_with(",0.0000000000000000e0"));
}

#[test]
fn bench_outputs_are_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let plan_path = tmp.path().join("plan.json");
    let mut plan = cssl::bench::ExperimentPlan::desk_structure(3);
    plan.dims = vec![6];
    plan.runs = 2;
    plan.alpha_grid = cssl::bench::log_grid(-1.0, 0.0, 4);
    io::write_json(&plan_path, &plan).unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let out = cssl(&["bench", "--plan", p(&plan_path), "--out", p(&dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dir
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["structure_cells.csv", "structure_sweep.csv", "structure_summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let anomaly = tmp.path().join("an");
    let mut plan = cssl::bench::ExperimentPlan::desk_anomaly(3);
    plan.dims = vec![6];
    plan.runs = 2;
    io::write_json(&plan_path, &plan).unwrap();
    let out = cssl(&["--workers", "2", "bench", "--plan", p(&plan_path), "--experiment", "anomaly", "--out", p(&anomaly)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(anomaly.join("anomaly_cells.csv").exists());
}
