use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use yamabe_core::geometry::io::{scalar_from_csv, FieldHeader};
use yamabe_core::pde::parse_trace_jsonl;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn yamabe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_yamabe")).args(args).env("RUST_LOG", "error").output().expect("binary runs")
}

fn solve(config: &Path, out: &Path) -> Output {
    yamabe(&["solve", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut cfg = read_json(&configs().join("sol_k1.json"));
    edit(&mut cfg);
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn slab_config_solves_to_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve(&configs().join("hyperbolic_slab_k1.json"), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let summary = read_json(&dir.path().join("summary.json"));
    assert!(summary["residual_norm"].as_f64().unwrap() <= 1e-9);
    assert_eq!(summary["within_window"], Value::Bool(true));

    let header =
        FieldHeader::from_json(&std::fs::read_to_string(dir.path().join("solution.header.json")).unwrap()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    let (grid, v) = scalar_from_csv(&csv, &header).unwrap();
    assert_eq!(grid.shape(), &[16, 16, 17]);
    assert!(v.all_finite());

    let trace = parse_trace_jsonl(&std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap()).unwrap();
    assert_eq!(trace.last().unwrap().s, 1.0);
    let bounds = read_json(&dir.path().join("bounds.json"));
    assert!(bounds["window"]["lower"].as_f64().unwrap() < bounds["window"]["upper"].as_f64().unwrap());
}

#[test]
fn t_of_one_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| v["problem"]["t"] = 1.0.into());
    let out = solve(&cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t < 1"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn phi_with_a_zero_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut samples = vec![1.0; 16 * 16 * 17];
    samples[100] = 0.0;
    let cfg = write_config(dir.path(), |v| v["problem"]["phi"] = serde_json::json!({ "samples": samples }));
    assert_eq!(solve(&cfg, &dir.path().join("out")).status.code(), Some(2));
}

#[test]
fn missing_or_malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(solve(&dir.path().join("absent.json"), dir.path()).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"manifold\": ").unwrap();
    assert_eq!(solve(&bad, dir.path()).status.code(), Some(2));
}

#[test]
fn solver_failure_keeps_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| {
        v["manifold"]["cells"] = 8.into();
        v["solver"] = serde_json::json!({ "method": "newton", "policy": { "max_newton": 1 } });
    });
    let out_dir = dir.path().join("out");
    let out = solve(&cfg, &out_dir);
    assert_eq!(out.status.code(), Some(3));
    let summary = read_json(&out_dir.join("summary.json"));
    assert_eq!(summary["converged"], Value::Bool(false));
    assert!(summary["error"].as_str().unwrap().contains("did not converge"));
    let trace = parse_trace_jsonl(&std::fs::read_to_string(out_dir.join("trace.jsonl")).unwrap()).unwrap();
    assert_eq!(trace.len(), 1);
    assert!(!out_dir.join("solution.csv").exists());
}

#[test]
fn identical_runs_give_identical_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| v["manifold"]["cells"] = 8.into());
    let strip = |p: &Path| {
        let mut v = read_json(&p.join("summary.json"));
        v.as_object_mut().unwrap().remove("timing");
        v
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(solve(&cfg, &a).status.code(), Some(0));
    assert_eq!(solve(&cfg, &b).status.code(), Some(0));
    assert_eq!(strip(&a), strip(&b));
    for f in ["solution.csv", "trace.jsonl", "bounds.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

fn verify(config: &Path, suite: &str, out: &Path) -> (Option<i32>, Value) {
    let o = yamabe(&["verify", "--config", config.to_str().unwrap(), "--suite", suite, "--out", out.to_str().unwrap()]);
    let report = serde_json::from_slice(&o.stdout).unwrap_or(Value::Null);
    (o.status.code(), report)
}

#[test]
fn hypothesis_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = verify(&configs().join("sol_k1.json"), "hypotheses", dir.path());
    assert_eq!(code, Some(0));
    let checks = report["reports"][0]["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 3);
    assert_eq!(read_json(&dir.path().join("verify.json")), report);
}

#[test]
fn fermi_suite_on_flat_has_no_defects() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = verify(&configs().join("flat.json"), "fermi", dir.path());
    assert_eq!(code, Some(0), "{report}");
    for check in report["reports"][0]["checks"].as_array().unwrap() {
        if check["name"].as_str().unwrap().contains("defect") {
            assert!(check["value"].as_f64().unwrap() <= 1e-10, "{check}");
        }
    }
}

#[test]
fn unknown_suite_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = verify(&configs().join("sol_k1.json"), "everything", dir.path());
    assert_eq!(code, Some(2));
}

#[test]
fn bundled_configs_parse() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = yamabe_cli::config::parse(&std::fs::read_to_string(&path).unwrap());
        assert!(cfg.is_ok(), "{}: {:?}", path.display(), cfg.err());
    }
}
