use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use xinfid::models::{save_model, QuadraticModel};
use xinfid::verify::{CheckKind, CheckResult};
use xinfid::Model;
use xinfid_cli::files::{parse_pgm, read_attribution};

fn xinfid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xinfid")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn linear_model(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("linear.json");
    save_model(&Model::Quadratic(QuadraticModel::linear(vec![1.0, -2.0, 0.5], 0.3)), &path).unwrap();
    path
}

fn report(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn explain_toy_gradient_and_rerun_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["explain", "--model", "toy", "--input", "20,11.9", "--method", "grad", "grad-sg", "--out-dir", s(dir.path())];
    let first = xinfid(&args);
    assert!(first.status.success());
    let grad = dir.path().join("attr-0000-grad.csv");
    assert_eq!(read_attribution(&grad).unwrap(), vec![1.0, 0.0]);
    let sg = std::fs::read(dir.path().join("attr-0000-grad-sg.csv")).unwrap();
    assert!(xinfid(&args).status.success());
    assert_eq!(std::fs::read(dir.path().join("attr-0000-grad-sg.csv")).unwrap(), sg);
}

#[test]
fn missing_model_file_is_named() {
    let out = xinfid(&["explain", "--model", "/no/such/model.json", "--input", "1,2", "--method", "grad"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/model.json"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let m = linear_model(dir.path());
    let global_on_noise = xinfid(&["evaluate", "--model", s(&m), "--input", "1,2,3", "--method", "occlusion"]);
    assert_eq!(global_on_noise.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&global_on_noise.stderr).contains("no masks"));
    assert_eq!(xinfid(&["verify", "--suite", "nope"]).status.code(), Some(2));
    assert_eq!(xinfid(&["explain", "--model", "toy", "--input", "1,2", "--method", "saliency"]).status.code(), Some(2));
    assert_eq!(xinfid(&["explain", "--model", "toy", "--input", "1,2,3", "--method", "grad"]).status.code(), Some(2));
    assert_eq!(xinfid(&["frobnicate"]).status.code(), Some(2));
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_xinfid"))
        .args(["verify", "--suite", "completeness"])
        .env("XINFID_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));
}

#[test]
fn exact_model_has_zero_infidelity() {
    let dir = tempfile::tempdir().unwrap();
    let m = linear_model(dir.path());
    for family in ["noisy-baseline:x0=zero,sigma=0.5", "coord-eps:eps=0.01", "baseline:x0=zero"] {
        let r = report(&xinfid(&[
            "evaluate", "--model", s(&m), "--input", "0.4,1,-0.3", "--input", "2,0.1,1",
            "--method", "grad", "optimal:n=2000", "--perturbation", family,
        ]));
        for rec in r["records"].as_array().unwrap() {
            assert!(rec["infidelity"].as_f64().unwrap() <= 1e-8, "{family}: {rec}");
        }
    }
}

#[test]
fn report_totals_match_independent_reaggregation() {
    let dir = tempfile::tempdir().unwrap();
    let m = linear_model(dir.path());
    let inputs = dir.path().join("x.csv");
    std::fs::write(&inputs, "0.4,1,-0.3\n2,0.1,1\n-1,-1,0.5\n").unwrap();
    let r = report(&xinfid(&[
        "evaluate", "--model", s(&m), "--inputs", s(&inputs), "--method", "grad", "ig", "grad-sg",
        "--kernel", "gaussian:sigma=0.3", "--smooth-samples", "10", "--sens-lips", "--n-infd", "100",
    ]));
    assert_eq!(r["format_version"], 1);
    let records = r["records"].as_array().unwrap();
    let order: Vec<u64> = records.iter().map(|x| x["input_index"].as_u64().unwrap()).collect();
    assert_eq!(order, vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);
    for summary in r["summary"].as_array().unwrap() {
        let method = summary["method"].as_str().unwrap();
        let rows: Vec<&Value> = records.iter().filter(|x| x["method"] == method).collect();
        for (key, field) in [("mean_infidelity", "infidelity"), ("mean_sens_max", "sens_max"), ("mean_sens_lips", "sens_lips")] {
            let mut sum = 0.0;
            for row in &rows {
                sum += row[field].as_f64().unwrap();
            }
            assert_eq!(summary[key].as_f64().unwrap(), sum / rows.len() as f64, "{method} {key}");
        }
        assert!(summary["mean_rinfd"].is_null());
    }
}

#[test]
fn shared_sample_optimum_is_never_beaten() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("mlp.json");
    let e = &xinfid::corpus::softplus_corpus(21, 1, 6)[0];
    save_model(&e.model, &model).unwrap();
    let x: Vec<String> = e.x.iter().map(|v| format!("{v:?}")).collect();
    let x2: Vec<String> = e.x.iter().map(|v| format!("{:?}", v + 0.5)).collect();
    let (x, x2) = (x.join(","), x2.join(","));
    for (family, methods) in [
        ("noisy-baseline:x0=zero,sigma=0.5", vec!["optimal", "grad", "ig", "constant"]),
        ("shapley", vec!["optimal", "occlusion", "grad*x", "ig*x", "shapley-exact"]),
    ] {
        let mut args = vec![
            "evaluate", "--model", s(&model), "--input", &x, "--input", &x2,
            "--perturbation", family, "--shared-samples", "--no-scaling", "--n-infd", "400", "--method",
        ];
        args.extend(methods.iter().copied());
        let r = report(&xinfid(&args));
        for chunk in r["records"].as_array().unwrap().chunks(methods.len()) {
            let best = chunk[0]["infidelity"].as_f64().unwrap();
            assert!(chunk[0]["method"].as_str().unwrap().starts_with("optimal"));
            for other in &chunk[1..] {
                let v = other["infidelity"].as_f64().unwrap();
                assert!(best <= v * (1.0 + 1e-9), "{family}: {best} > {v} for {}", other["method"]);
            }
        }
    }
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let m = linear_model(dir.path());
    let out = dir.path().join("report.json");
    let cfg = dir.path().join("run.json");
    let spec = serde_json::json!({
        "model": s(&m),
        "methods": ["grad"],
        "perturbation": "coord-eps:eps=0.1",
        "measures": {"n_infd": 50, "n_sens": 5},
        "out": s(&out),
        "seed": 3,
    });
    std::fs::write(&cfg, spec.to_string()).unwrap();
    let status = xinfid(&["evaluate", "--config", s(&cfg), "--input", "1,2,3", "--seed", "4", "--n-sens", "7"]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let r: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(r["seed"], 4);
    assert_eq!(r["config"]["n_infd"], 50);
    assert_eq!(r["config"]["n_sens"], 7);
    assert_eq!(r["perturbation"], "coord-eps:eps=0.1");
    std::fs::write(&cfg, r#"{"model": "toy", "colour": 1}"#).unwrap();
    assert_eq!(xinfid(&["evaluate", "--config", s(&cfg), "--input", "1,2"]).status.code(), Some(2));
}

#[test]
fn verify_exit_codes() {
    let ok = xinfid(&["verify", "--suite", "completeness", "--seed", "7"]);
    assert_eq!(ok.status.code(), Some(0));
    let lines: Vec<Value> = ok.stdout.split(|&b| b == b'\n').filter(|l| !l.is_empty()).map(|l| serde_json::from_slice(l).unwrap()).collect();
    assert_eq!(lines.len(), 20);
    assert!(lines.iter().all(|l| l["passed"] == true && l["lhs"].is_number() && l["slack"].is_number()));
    let again = xinfid(&["verify", "--suite", "completeness", "--seed", "7"]);
    assert_eq!(ok.stdout, again.stdout);
    // the multi-layer softplus bound fails on some generated networks
    let bounds = xinfid(&["verify", "--suite", "bounds", "--seed", "7"]);
    assert_eq!(bounds.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bounds.stderr).contains("FAIL softplus-bound"));
}

#[test]
fn corrupted_bound_is_reported() {
    let good = CheckResult::inequality("hessian-sensitivity", 0.4, 0.5, 1e-12, "x=(0,0)".into());
    let corrupted = CheckResult { rhs: 0.1, passed: false, ..good.clone() };
    let mut out = Vec::new();
    assert!(xinfid_cli::report_checks(std::slice::from_ref(&good), &mut out).unwrap());
    out.clear();
    assert!(!xinfid_cli::report_checks(&[good, corrupted], &mut out).unwrap());
    let last: CheckResult = serde_json::from_slice(out.split(|&b| b == b'\n').nth(1).unwrap()).unwrap();
    assert!(last.failed() && last.kind == CheckKind::Inequality && last.rhs == 0.1);
}

#[test]
fn render_graymaps() {
    let dir = tempfile::tempdir().unwrap();
    let attr = dir.path().join("a.csv");
    std::fs::write(&attr, "# method=x locality=global seed=0\nindex,value\n0,-1\n1,1\n2,-1\n3,1\n").unwrap();
    let pgm = dir.path().join("a.pgm");
    let out = xinfid(&["render", "--attr", s(&attr), "--height", "2", "--width", "2", "--out", s(&pgm)]);
    assert!(out.status.success());
    let (w, h, px) = parse_pgm(&std::fs::read(&pgm).unwrap()).unwrap();
    assert_eq!((w, h, px), (2, 2, vec![85, 170, 85, 170]));
    let bad = xinfid(&["render", "--attr", s(&attr), "--height", "3", "--width", "2", "--out", s(&pgm)]);
    assert_eq!(bad.status.code(), Some(2));

    // an explained 3x3 model renders with the right dimensions
    let model = dir.path().join("m.json");
    save_model(&Model::Quadratic(QuadraticModel::linear(vec![1.0; 9], 0.0)), &model).unwrap();
    assert!(xinfid(&["explain", "--model", s(&model), "--input", "1,2,3,4,5,6,7,8,9", "--method", "grad", "--out-dir", s(dir.path())]).status.success());
    let grad = dir.path().join("attr-0000-grad.csv");
    assert!(xinfid(&["render", "--attr", s(&grad), "--height", "3", "--width", "3", "--out", s(&pgm)]).status.success());
    let (w, h, px) = parse_pgm(&std::fs::read(&pgm).unwrap()).unwrap();
    assert_eq!((w, h), (3, 3));
    assert!(px.iter().all(|&p| p == 128));
}

#[test]
fn sanity_check_flags_model_independent_methods() {
    let out = xinfid(&["sanity-check", "--n-inputs", "5", "--dim", "8", "--hidden", "16", "--method", "grad", "constant"]);
    let rows = report(&out);
    let rows = rows.as_array().unwrap();
    assert_eq!(rows[1]["method"], "constant");
    assert_eq!(rows[1]["corr"], 1.0);
    assert_eq!(rows[1]["flagged"], true);
    let corr = rows[0]["corr"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&corr));
}
