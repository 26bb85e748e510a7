use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tomolab(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tomolab"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("TOMOLAB_THREADS", t.to_string()),
        None => cmd.env_remove("TOMOLAB_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = tomolab(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_is_byte_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let args = ["simulate", "--state", "squeezed:N=1.2,xi=0.4", "--n", "1600", "--seed", "7", "-o", p(&csv)];
    let mut seen = Vec::new();
    for threads in [Some(1), Some(3), None] {
        let out = tomolab(&args, threads);
        assert!(out.status.success());
        seen.push((std::fs::read(&csv).unwrap(), std::fs::read(dir.path().join("s.csv.json")).unwrap()));
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
    let meta = json(&dir.path().join("s.csv.json"));
    assert_eq!(meta["n"], 1600);
    assert_eq!(meta["config"]["seed"], 7);
}

#[test]
fn sml_fit_report_and_worker_independence() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    ok(&["simulate", "--state", "coherent:N=1", "--n", "800", "--seed", "2", "-o", p(&csv)]);
    let mut fits = Vec::new();
    for threads in [1, 4] {
        let fit = dir.path().join(format!("fit{threads}.json"));
        let out = tomolab(&["estimate", "--in", p(&csv), "--estimator", "sml", "--N", "5", "-o", p(&fit)], Some(threads));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fits.push(json(&fit));
    }
    let trace: Vec<f64> = serde_json::from_value(fits[0]["loglik_trace"].clone()).unwrap();
    assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    assert_eq!(fits[0]["seed"], 2);
    for key in ["re", "im"] {
        let a: Vec<Vec<f64>> = serde_json::from_value(fits[0]["rho"][key].clone()).unwrap();
        let b: Vec<Vec<f64>> = serde_json::from_value(fits[1]["rho"][key].clone()).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn embedded_argv_reproduces_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    ok(&["simulate", "--state", "fock:k=1", "--n", "300", "--seed", "5", "-o", p(&csv)]);
    let fit = dir.path().join("fit.json");
    ok(&["estimate", "--in", p(&csv), "--estimator", "pfp", "--N", "4", "-o", p(&fit)]);
    let first = std::fs::read(&fit).unwrap();
    let report = json(&fit);
    let argv: Vec<String> = serde_json::from_value(report["config"]["argv"].clone()).unwrap();
    assert_eq!(report["config"]["args"]["command"]["estimate"]["dim"], 4);
    let args: Vec<&str> = argv[1..].iter().map(String::as_str).collect();
    ok(&args);
    assert_eq!(std::fs::read(&fit).unwrap(), first);
    let physical = &report["rho"]["physical"];
    assert_eq!(physical, &Value::Bool(false));
}

#[test]
fn cross_validate_and_wigner_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    ok(&["simulate", "--state", "vacuum", "--n", "2000", "--seed", "1", "-o", p(&csv)]);
    let cv = dir.path().join("cv.json");
    ok(&["cross-validate", "--in", p(&csv), "--N", "8", "-o", p(&cv)]);
    let v = json(&cv);
    assert_eq!(v["risk_curve"].as_array().unwrap().len(), 8);
    assert!(v["n_star"].as_u64().unwrap() >= 1);

    let w = dir.path().join("w.csv");
    ok(&["wigner", "--state", "vacuum", "--grid", "4,16", "-o", p(&w)]);
    let text = std::fs::read_to_string(&w).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "# -4 4 16");
    assert_eq!(lines.next().unwrap(), "# -4 4 16");
    assert_eq!(lines.count(), 16);

    let fit = dir.path().join("fit.json");
    ok(&["estimate", "--in", p(&csv), "--estimator", "pfp", "--N", "3", "-o", p(&fit)]);
    let wj = dir.path().join("w.json");
    ok(&["wigner", "--matrix", p(&fit), "--grid", "4,16", "-o", p(&wj)]);
    assert_eq!(json(&wj)["values"].as_array().unwrap().len(), 16);

    let k = dir.path().join("k.csv");
    ok(&["estimate", "--in", p(&csv), "--estimator", "kernel", "--c", "4", "--grid", "4,12", "-o", p(&k)]);
    assert!(dir.path().join("k.csv.json").exists());
}

#[test]
fn bench_writes_csv_and_rates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig.csv");
    ok(&[
        "bench", "--state", "coherent:N=1", "--reps", "2", "--ns", "100,200", "--sml-max-dim", "3",
        "--pfp-max-dim", "6", "--sml-max-iter", "30", "-o", p(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "n,estimator,N_star,l2_risk");
    assert_eq!(text.lines().count(), 5);
    let side = json(&dir.path().join("fig.csv.json"));
    assert_eq!(side["rates"].as_array().unwrap().len(), 2);

    let out = dir.path().join("dim.csv");
    ok(&[
        "bench", "--figure", "error-vs-dim", "--state", "coherent:N=1", "--reps", "1", "--ns", "100",
        "--sml-max-dim", "2", "--pfp-max-dim", "4", "--sml-max-iter", "20", "-o", p(&out),
    ]);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1 + 4 + 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("x.csv");
    assert_eq!(tomolab(&["simulate", "--bogus"], None).status.code(), Some(1));
    assert_eq!(tomolab(&["simulate", "--state", "nonsense", "--n", "5", "-o", p(&o)], None).status.code(), Some(1));
    assert_eq!(tomolab(&["estimate", "--in", "/nonexistent.csv", "--estimator", "pfp", "--N", "3", "-o", p(&o)], None).status.code(), Some(1));
    assert_eq!(tomolab(&["--help"], None).status.code(), Some(0));
    // Thermal state cut to one level in strict mode loses most of its mass.
    let out = tomolab(&["simulate", "--state", "thermal:beta=0.5,dim=1", "--n", "5", "--strict", "-o", p(&o)], None);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    // Pattern functions refuse lossy data.
    ok(&["simulate", "--state", "vacuum", "--n", "50", "--eta", "0.8", "-o", p(&o)]);
    let fit = dir.path().join("f.json");
    assert_eq!(tomolab(&["estimate", "--in", p(&o), "--estimator", "pfp", "--N", "3", "-o", p(&fit)], None).status.code(), Some(1));
}
