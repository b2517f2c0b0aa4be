use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn difformer(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_difformer")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn landscape_simple_starts_at_two_and_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = difformer(&["landscape", "--family", "simple", "--out", "l"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = dir.path().join("l/landscape_simple.csv");
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("z_sq,f,delta\n"));
    assert_eq!(csv_column(&csv, "z_sq").len(), 401);
    assert_eq!(csv_column(&csv, "f")[0], 2.0);
    assert_eq!(csv_column(&csv, "delta")[0], 0.0);

    let manifest = json(&dir.path().join("l/manifest.json"));
    assert_eq!(manifest["command"], "landscape");
    assert_eq!(manifest["config"]["step"], 0.01);
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), 1);
}

#[test]
fn unknown_names_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = difformer(&["landscape", "--family", "cubic"], dir.path());
    assert_eq!(code(&out), 2);
    let out = difformer(&["diffuse", "--coupling", "gcn_rw"], dir.path());
    assert_eq!(code(&out), 2);
    let out = difformer(&["diffuse", "--geometry", "flat"], dir.path());
    assert_eq!(code(&out), 2);
    let out = difformer(&["train"], dir.path());
    assert_eq!(code(&out), 2, "train without data");
}

#[test]
fn diffuse_identity_energy_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let out = difformer(&["diffuse", "--coupling", "identity", "--steps", "20", "--out", "d"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let energy = csv_column(&dir.path().join("d/traj_identity_tau0.5_k20_beta0.csv"), "energy");
    assert_eq!(energy.len(), 21);
    assert!(energy.iter().all(|&e| e == energy[0]));
}

#[test]
fn diffuse_source_term_prevents_collapse() {
    let dir = tempfile::tempdir().unwrap();
    let out = difformer(&["diffuse", "--coupling", "gcn_sym", "--beta", "0,1", "--out", "d"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ratios = csv_column(&dir.path().join("d/summary.csv"), "diversity_ratio");
    assert!(ratios[0] < 1e-4, "no source: {}", ratios[0]);
    assert!(ratios[1] > 1e-2, "with source: {}", ratios[1]);
}

#[test]
fn audit_unknown_suite_lists_the_choices() {
    let dir = tempfile::tempdir().unwrap();
    let out = difformer(&["audit", "--suite", "bogus"], dir.path());
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    for name in ["thm1", "prop1", "thm2", "oversmooth", "linear_equiv", "gradcheck", "all"] {
        assert!(err.contains(name), "{name} missing from: {err}");
    }
}

#[test]
fn audit_linear_equivalence_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = difformer(&["audit", "--suite", "linear_equiv", "--out", "a"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&dir.path().join("a/audit_linear_equiv.json"));
    assert_eq!(report["suite"], "linear_equiv");
    assert!(report["metrics"]["max_abs_diff"].as_f64().unwrap() <= 1e-10);
    assert!(report["violations"].as_array().unwrap().is_empty());
}

#[test]
fn audit_static_descent_has_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let out = difformer(&["audit", "--suite", "thm1", "--seeds", "100", "--out", "a"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&dir.path().join("a/audit_thm1.json"));
    assert_eq!(report["seeds"], 100);
    assert_eq!(report["violations"].as_array().unwrap().len(), 0);
    for key in ["lambda", "tau", "min_ratio", "max_ratio", "diversity_initial", "diversity_final"] {
        assert!(report.get(key).is_some(), "{key}");
    }
}

#[test]
fn train_reruns_are_byte_identical_and_manifest_replays() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["train", "--synth", "sbm", "--epochs", "15", "--layers", "2", "--seed", "4"];
    let first = difformer(&[&args[..], &["--out", "r1"]].concat(), dir.path());
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let second = difformer(&[&args[..], &["--out", "r2"]].concat(), dir.path());
    assert_eq!(code(&second), 0);
    let replay = difformer(&["train", "--config", "r1/manifest.json", "--out", "r3"], dir.path());
    assert_eq!(code(&replay), 0, "{}", stderr(&replay));

    let read = |run: &str, name: &str| fs::read(dir.path().join(run).join(name)).unwrap();
    for name in ["history-seed4.csv", "checkpoint-seed4.json", "summary.json"] {
        assert_eq!(read("r1", name), read("r2", name), "{name}");
        assert_eq!(read("r1", name), read("r3", name), "{name}");
    }
    let history = csv_column(&dir.path().join("r1/history-seed4.csv"), "epoch");
    assert_eq!(history.len(), 15);

    let manifest = json(&dir.path().join("r1/manifest.json"));
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["config"]["use_graph"], true);
    assert_eq!(manifest["config"]["hidden"], 32);
    let outputs = manifest["outputs"].as_object().unwrap();
    assert_eq!(outputs.len(), 3);
    assert!(outputs.values().all(|d| d.as_str().unwrap().len() == 64));
}

#[test]
fn train_defaults_on_sbm_beat_the_threshold_over_five_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = difformer(&["train", "--synth", "sbm", "--seeds", "5", "--out", "t"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("mean test accuracy"));
    let summary = json(&dir.path().join("t/summary.json"));
    assert_eq!(summary["runs"].as_array().unwrap().len(), 5);
    assert!(summary["mean_test"].as_f64().unwrap() >= 0.90, "{summary}");
}

#[test]
fn eval_prints_metric_json_and_rejects_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let train = difformer(&["train", "--synth", "sbm", "--epochs", "10", "--layers", "1", "--out", "t"], dir.path());
    assert_eq!(code(&train), 0, "{}", stderr(&train));

    let eval = difformer(&["eval", "--checkpoint", "t/checkpoint-seed0.json", "--synth", "sbm", "--out", "e"], dir.path());
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    let printed: Value = serde_json::from_str(&stdout(&eval)).unwrap();
    assert_eq!(printed["metric"], "accuracy");
    assert_eq!(printed["nodes"], 160);
    let summary = json(&dir.path().join("t/summary.json"));
    assert_eq!(printed["value"], summary["runs"][0]["test"]);

    let synth = difformer(&["synth", "--feat-dim", "8", "--out", "narrow"], dir.path());
    assert_eq!(code(&synth), 0, "{}", stderr(&synth));
    let bad = difformer(&["eval", "--checkpoint", "t/checkpoint-seed0.json", "--data", "narrow"], dir.path());
    assert_eq!(code(&bad), 1);
    assert!(stderr(&bad).contains("dimension mismatch"), "{}", stderr(&bad));
}

#[test]
fn synthesized_files_train_and_malformed_files_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let synth = difformer(&["synth", "--per-block", "30", "--seed", "2", "--out", "data"], dir.path());
    assert_eq!(code(&synth), 0, "{}", stderr(&synth));
    let train = difformer(&["train", "--data", "data", "--epochs", "5", "--layers", "1", "--out", "t"], dir.path());
    assert_eq!(code(&train), 0, "{}", stderr(&train));
    let manifest = json(&dir.path().join("t/manifest.json"));
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 4);

    let labels = dir.path().join("data/labels.txt");
    let mut lines: Vec<String> = fs::read_to_string(&labels).unwrap().lines().map(String::from).collect();
    lines[2] = "x".into();
    fs::write(&labels, lines.join("\n") + "\n").unwrap();
    let bad = difformer(&["train", "--data", "data", "--epochs", "5"], dir.path());
    assert_eq!(code(&bad), 1);
    assert!(stderr(&bad).contains("labels.txt:3"), "{}", stderr(&bad));
}

#[test]
fn config_file_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"tau": [0.25], "steps": [5], "coupling": ["all_one"]}"#).unwrap();
    let out = difformer(&["diffuse", "--config", "cfg.json", "--steps", "3", "--out", "d"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("d/traj_all_one_tau0.25_k3_beta0.csv").exists());

    fs::write(dir.path().join("typo.json"), r#"{"stpes": [5]}"#).unwrap();
    let out = difformer(&["diffuse", "--config", "typo.json"], dir.path());
    assert_eq!(code(&out), 2);
}
