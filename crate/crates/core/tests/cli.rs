mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::fixture;
use serde_json::Value;

fn exid(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exid")).args(args).env("EXID_OUTPUT_DIR", out_dir).output().unwrap()
}

fn config() -> String {
    fixture("two_link_pipeline.json").display().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn strip_timings(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("seconds");
            map.remove("stage_seconds");
            map.values_mut().for_each(strip_timings);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

#[test]
fn inspect_reports_the_chain() {
    let dir = tempfile::tempdir().unwrap();
    let out = exid(dir.path(), &["-c", &config(), "inspect"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let chain = read_json(&dir.path().join("chain.json"));
    assert_eq!(chain["dof"], 2);
    assert_eq!(chain["joint_names"], serde_json::json!(["j1", "j2"]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("chain.json"));
}

#[test]
fn missing_upstream_artifact_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = exid(dir.path(), &["-c", &config(), "identify"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trajectory"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"urdf_path": "x.urdf", "no_such_key": 1}"#).unwrap();
    let out = exid(dir.path(), &["-c", cfg.to_str().unwrap(), "inspect"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    std::fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(exid(dir.path(), &["-c", cfg.to_str().unwrap(), "inspect"]).status.code(), Some(2));
}

#[test]
fn full_pipeline_recovers_parameters_and_is_reproducible() {
    let first = tempfile::tempdir().unwrap();
    let out = exid(first.path(), &["-c", &config(), "all"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report = read_json(&first.path().join("report.json"));
    let err = report["theta_b_error"]["relative_linf"].as_f64().unwrap();
    assert!(err < 1e-3, "{err}");
    let opt = read_json(&first.path().join("opt_report.json"));
    assert_eq!(opt["feasible"], true);
    let dense = opt["dense_check"]["collision_clearance"].as_f64().unwrap();
    assert!(dense >= 0.0);

    let second = tempfile::tempdir().unwrap();
    assert!(exid(second.path(), &["-c", &config(), "all"]).status.success());
    let mut names: Vec<_> = std::fs::read_dir(first.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 15);
    for name in names {
        let (a, b) = (first.path().join(&name), second.path().join(&name));
        if name.to_string_lossy().ends_with(".json") {
            let (mut x, mut y) = (read_json(&a), read_json(&b));
            strip_timings(&mut x);
            strip_timings(&mut y);
            assert_eq!(x, y, "{name:?}");
        } else {
            assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{name:?}");
        }
    }
}
