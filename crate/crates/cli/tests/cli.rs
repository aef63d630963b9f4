use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn lapmesh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lapmesh"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lapmesh(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tree_hash(dir: &Path) -> String {
    fn walk(dir: &Path, root: &Path, files: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, files);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files);
    files.sort();
    let mut h = Sha256::new();
    for (name, bytes) in files {
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    format!("{:x}", h.finalize())
}

const SMALL: [&str; 4] = ["--set", "data.height=16", "--set", "data.width=16"];

fn gen(dir: &Path, count: &str, seed: &str) {
    let mut args = vec!["gen-data", "--count", count, "--seed", seed, "--out", dir.to_str().unwrap()];
    args.extend(SMALL);
    ok(&args);
}

#[test]
fn gradcheck_passes() {
    let stdout = ok(&["gradcheck", "--seed", "0"]);
    let reports: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 10);
    assert!(reports.iter().all(|r| r["passed"] == true && r["max_rel_error"].as_f64().unwrap() <= 1e-4));
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    gen(&a, "8", "1");
    gen(&b, "8", "1");
    gen(&c, "8", "2");
    assert_eq!(tree_hash(&a), tree_hash(&b));
    assert_ne!(tree_hash(&a), tree_hash(&c));
    assert_eq!(std::fs::read_dir(&a).unwrap().count(), 9);
}

#[test]
fn eval_of_ground_truth_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "3", "5");
    let report_path = tmp.path().join("report.json");
    let d = data.to_str().unwrap();
    let stdout = ok(&["eval", "--data", d, "--pred-meshes", d, "--out", report_path.to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["mpve_mm"].as_f64().unwrap(), 0.0);
    assert!(report["reconst_error_mm"].as_f64().unwrap() < 1e-6);
    assert_eq!(report["sample_count"], 3);
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report_path).unwrap()).unwrap();
    assert_eq!(written, report);
}

#[test]
fn train_eval_reconstruct_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    gen(&tmp.path().join("data"), "4", "3");
    let mut poses = vec!["gen-data".to_string(), "--poses-only".into(), "--count".into(), "100".into(), "--out".into(), p("poses")];
    poses.extend(SMALL.iter().map(|s| s.to_string()));
    ok(&poses.iter().map(String::as_str).collect::<Vec<_>>());
    let fit = ok(&["fit-prior", "--meshes", &p("poses"), "--components", "2", "--out", &p("prior.lmp")]);
    assert!(fit.contains("\"components\": 2"));
    ok(&[
        "train", "--data", &p("data"), "--prior", &p("prior.lmp"), "--out", &p("run"), "--set", "train.steps=2", "--set",
        "train.batch_size=2", "--set", "train.lr=1e-3", "--threads", "1",
    ]);
    let log = std::fs::read_to_string(tmp.path().join("run/metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let report = ok(&["eval", "--data", &p("data"), "--checkpoint", &p("run/checkpoint")]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(report["mpve_mm"].as_f64().unwrap() > 0.0);
    ok(&["reconstruct", "--data", &p("data"), "--checkpoint", &p("run/checkpoint"), "--index", "1", "--out", &p("rec")]);
    assert!(tmp.path().join("rec/sample_00001.obj").is_file());
    for z in 0..6 {
        let pgm = std::fs::read(tmp.path().join(format!("rec/sample_00001_part_{z}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5"));
    }
}

#[test]
fn usage_and_fault_exit_codes() {
    assert_eq!(lapmesh(&["gen-data", "--bogus"]).status.code(), Some(2));
    assert_eq!(lapmesh(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(lapmesh(&["--help"]).status.code(), Some(0));
    let missing = lapmesh(&["eval", "--data", "/nonexistent/dir", "--pred-meshes", "/nonexistent/dir"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));
    let bad_key = lapmesh(&["gen-data", "--set", "data.nope=1"]);
    assert_eq!(bad_key.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("data.nope"));
}
