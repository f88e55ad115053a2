//! Runs the `projot` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn projot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_projot")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn error_json(o: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("error json on stderr");
    serde_json::from_str(line).unwrap()
}

fn gen(dir: &Path, extra: &[&str]) -> String {
    let out = dir.join("bundle");
    let out = out.to_str().unwrap().to_string();
    let mut args = vec!["gen-synthetic", "--out", &out, "--samples", "60"];
    args.extend_from_slice(extra);
    let o = projot(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn noise_free_benchmark_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = gen(dir.path(), &["--noise-scale", "0"]);
    let json = dir.path().join("bench.json");
    let csv = dir.path().join("bench.csv");
    let o = projot(&[
        "benchmark", "--bundle", &bundle, "--components", "16", "--attack", "none",
        "--out-json", json.to_str().unwrap(), "--out-csv", csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&json);
    let rows = doc["report"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert_eq!(r["clean_accuracy"], 1.0, "{r}");
        assert!(r["robust_accuracy"].is_null());
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("method,clean_accuracy,robust_accuracy,mean_margin,samples,seconds"));
    assert_eq!(text.lines().count(), 5);
    assert!(String::from_utf8_lossy(&o.stdout).contains("ot_projected"));
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.retain(|k, _| !k.ends_with("seconds"));
            m.values_mut().for_each(strip_timing);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[test]
fn benchmark_output_is_deterministic_apart_from_timings() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = gen(dir.path(), &[]);
    let mut docs = Vec::new();
    for name in ["a.json", "b.json"] {
        let path = dir.path().join(name);
        let o = projot(&[
            "benchmark", "--bundle", &bundle, "--components", "16", "--seed", "3",
            "--out-json", path.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let mut v = read_json(&path);
        strip_timing(&mut v);
        docs.push(v);
    }
    assert_eq!(docs[0], docs[1]);
}

#[test]
fn subspace_then_classify_with_a_saved_projector() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = gen(dir.path(), &[]);
    let proj = dir.path().join("proj.bin");
    let o = projot(&["build-subspace", "--bundle", &bundle, "--components", "8", "--out", proj.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // header, 64x8 basis and 8 singular values
    assert_eq!(std::fs::metadata(&proj).unwrap().len(), 8 + 4 * (64 * 8 + 8));
    let preds = dir.path().join("p.csv");
    let o = projot(&[
        "classify", "--bundle", &bundle, "--method", "ot_projected", "--projector", proj.to_str().unwrap(),
        "--predictions", preds.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), 61);
}

#[test]
fn attack_writes_a_loadable_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = gen(dir.path(), &[]);
    let attacked = dir.path().join("attacked");
    let o = projot(&["simulate-attack", "--bundle", &bundle, "--out", attacked.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = projot(&["classify", "--bundle", attacked.to_str().unwrap(), "--method", "cosine"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn passing_suite_prints_json_and_exits_zero() {
    let o = projot(&["verify", "--suite", "dot", "--trials", "200"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["pass"], true);
    assert_eq!(v["suite"], "dot");
}

#[test]
fn failing_suite_exits_three_and_keeps_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("distortion.json");
    let o = projot(&["verify", "--suite", "distortion", "--trials", "500", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let e = error_json(&o);
    assert_eq!(e["error"]["exit_code"], 3);
    assert_eq!(e["error"]["module"], "property_suite");
    assert_eq!(read_json(&out)["pass"], false);
}

#[test]
fn usage_errors_exit_one() {
    let o = projot(&["classify", "--method", "nearest"]);
    assert_eq!(code(&o), 1);
    let dir = tempfile::tempdir().unwrap();
    let bundle = gen(dir.path(), &[]);
    let o = projot(&["classify", "--bundle", &bundle, "--method", "ot_projected", "--components", "500"]);
    assert_eq!(code(&o), 1);
    assert_eq!(error_json(&o)["error"]["kind"], "usage");
    assert_eq!(code(&projot(&["--help"])), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = projot(&["classify", "--bundle", dir.path().join("missing").to_str().unwrap(), "--method", "cosine"]);
    assert_eq!(code(&o), 2);
    let bundle = gen(dir.path(), &[]);
    let images = Path::new(&bundle).join("images.bin");
    let bytes = std::fs::read(&images).unwrap();
    std::fs::write(&images, &bytes[..bytes.len() - 4]).unwrap();
    let o = projot(&["classify", "--bundle", &bundle, "--method", "cosine"]);
    assert_eq!(code(&o), 2);
    assert_eq!(error_json(&o)["error"]["kind"], "data");
}

#[test]
fn failed_runs_remove_their_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = gen(dir.path(), &[]);
    let json = dir.path().join("report.json");
    let bad = dir.path().join("no-such-dir").join("p.csv");
    let o = projot(&[
        "classify", "--bundle", &bundle, "--method", "cosine",
        "--out", json.to_str().unwrap(), "--predictions", bad.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!json.exists());
}
