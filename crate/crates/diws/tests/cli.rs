use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diws::csv_io::{load_csv, parse_pd_matrix};
use diws::record::validate_run_record;
use diws_core::data::{generate_synthetic, SyntheticSpec};

const SMALL: &str = r#"{
  "dataset": {"synthetic": {"samples_per_class": 40}},
  "train": {"epochs": 6, "controller_start_epoch": 2, "t_n": 5, "t_c": 3},
  "metrics": {"pd_archs": 4, "pd_steps_per_arch": 5, "tracked_archs": 8, "ktau_interval": 2,
              "gt_archs": 4, "scratch": {"steps": 20}}
}"#;

fn diws(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diws")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, SMALL).unwrap();
    path
}

fn run_in(dir: &Path, out: &str, args: &[&str]) -> Output {
    let config = small_config(dir);
    let out = dir.join(out);
    let mut full = vec!["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    full.extend_from_slice(args);
    diws(&full)
}

#[test]
fn check_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = diws(&["check", "--seed", "7", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("check.json")).unwrap()).unwrap();
    assert_eq!(report["failed"], 0);
    let instances = report["instances"].as_array().unwrap();
    assert_eq!(instances.len(), 140);
    assert!(instances.iter().all(|i| i["holds"] == true));
}

#[test]
fn missing_config_exits_one_naming_path() {
    let out = diws(&["train", "--config", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(diws(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(diws(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(diws(&["train", "--mode", "sideways"]).status.code(), Some(1));
    assert_eq!(diws(&[]).status.code(), Some(1));
    assert_eq!(diws(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_values_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"train": {"lambda": -1}}"#).unwrap();
    assert_eq!(diws(&["train", "--config", path.to_str().unwrap()]).status.code(), Some(1));
    fs::write(&path, r#"{"train": {"lamda": 1}}"#).unwrap();
    assert_eq!(diws(&["train", "--config", path.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(
        &path,
        r#"{"dataset": {"synthetic": {"samples_per_class": 20}},
            "train": {"mode": "standard", "eta_w": 1e300, "epochs": 3, "controller_start_epoch": 1, "t_n": 5, "t_c": 1}}"#,
    )
    .unwrap();
    let out = diws(&["train", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_writes_a_valid_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "o", &["train", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("o/run_record.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    validate_run_record(&doc).unwrap();
    assert_eq!(doc["config"]["train"]["seed"], 4);
    assert_eq!(doc["epochs"].as_array().unwrap().len(), 6 + 4);
}

#[test]
fn embedded_config_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), "a", &["train", "--seed", "5", "--mode", "standard"]);
    let first = fs::read_to_string(dir.path().join("a/run_record.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&first).unwrap();
    let snapshot = dir.path().join("snapshot.json");
    let mut cfg = doc["config"].clone();
    cfg["out_dir"] = serde_json::Value::String(dir.path().join("b").to_str().unwrap().into());
    fs::write(&snapshot, cfg.to_string()).unwrap();
    let out = diws(&["train", "--config", snapshot.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let second = fs::read_to_string(dir.path().join("b/run_record.json")).unwrap();
    let strip = |s: &str| {
        let mut v: serde_json::Value = serde_json::from_str(s).unwrap();
        v["config"]["out_dir"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip(&first), strip(&second));
}

#[test]
fn compare_pd_writes_matrices_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "o", &["compare-pd", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["pd_di.csv", "pd_standard.csv"] {
        let path = dir.path().join("o").join(name);
        let m = parse_pd_matrix(&fs::read_to_string(&path).unwrap(), &path).unwrap();
        assert_eq!(m.len(), 4);
        assert!(m.archs.iter().all(|a| a.starts_with("e0:op") && a.contains(",e5:op")));
        assert!(m.get(3, 0).is_none() && m.get(0, 3).is_some());
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/compare_pd.json")).unwrap()).unwrap();
    for mode in ["di", "standard"] {
        let changes = summary["modes"][mode]["performance_change"].as_object().unwrap();
        assert_eq!(changes.keys().collect::<Vec<_>>(), ["1", "2", "3"]);
    }
}

#[test]
fn ktau_and_gt_tau_outputs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), "o", &["ktau"]).status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("o/ktau.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,ktau");
    assert_eq!(lines.len(), 1 + 6 - 2);
    for line in &lines[1..] {
        let tau: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((-1.0..=1.0).contains(&tau));
    }
    assert_eq!(run_in(dir.path(), "o", &["gt-tau", "--mode", "standard"]).status.code(), Some(0));
    let gt: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/gt_tau.json")).unwrap()).unwrap();
    assert_eq!(gt["mode"], "standard");
    assert_eq!(gt["ws_accs"].as_array().unwrap().len(), 4);
}

#[test]
fn gen_data_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), "o", &["gen-data"]).status.code(), Some(0));
    let loaded = load_csv(&dir.path().join("o/data.csv")).unwrap();
    let original = generate_synthetic(&SyntheticSpec { samples_per_class: 40, ..SyntheticSpec::default() }).unwrap();
    assert_eq!(loaded, original);
}

#[test]
fn csv_dataset_config() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), "o", &["gen-data"]);
    let cfg = dir.path().join("csv.json");
    fs::write(
        &cfg,
        r#"{"dataset": {"csv": "o/data.csv"}, "train": {"epochs": 2, "controller_start_epoch": 1, "t_n": 3, "t_c": 2}}"#,
    )
    .unwrap();
    let out = diws(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("p").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}
