//! End-to-end runs of the `vaps` binary on a tiny configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use vaps_core::pipeline::{Checkpoint, VapsModel};

const TINY: &str = r#"{
  "data": {"n_attrs": 3, "n_objs": 4, "samples_per_pair": 6, "eval_samples_per_pair": 3,
           "d": 8, "d_lat": 4, "n_tokens": 3, "basis_std": 1.0},
  "run": {"d": 8, "d_tok": 8, "d_p": 8, "d_a": 8, "n_tokens": 3, "prefix_len": 2,
          "prompt_len": 2, "repo_size": 4, "n_select": 2, "adapter_hidden": 4,
          "epochs": 3, "batch_size": 8}
}"#;

fn vaps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vaps")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = vaps(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.json"), config).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn config(&self) -> PathBuf {
        self.path("config.json")
    }

    fn data(&self) -> PathBuf {
        self.path("data/data.vapsfeat")
    }

    fn gen(&self) {
        ok(&["gen-data", "--config", s(&self.config()), "--out", s(&self.path("data"))]);
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(out);
        let (config, data) = (self.config(), self.data());
        let mut args = vec!["train", "--config", s(&config), "--data", s(&data), "--out", s(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        out
    }
}

#[test]
fn default_gen_data_passes_validate_feat() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&["gen-data", "--out", s(&out)]);
    let v = ok(&["validate-feat", "--data", s(&out.join("data.vapsfeat")), "--d", "32", "--n-tokens", "8"]);
    let report: Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!(report["valid"], true);
    // 48 seen pairs for training; val and test each cover the seen pairs
    // plus 16 unseen ones.
    assert_eq!(report["records"], 48 * 20 + 2 * (48 + 16) * 10);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["config"]["basis_std"], 0.07);
}

#[test]
fn validate_feat_rejects_wrong_dimensions_and_garbage() {
    let w = Workspace::new(TINY);
    w.gen();
    let out = vaps(&["validate-feat", "--data", s(&w.data()), "--d", "9"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(w.data(), b"not a feature file").unwrap();
    assert_eq!(vaps(&["validate-feat", "--data", s(&w.data())]).status.code(), Some(2));
}

#[test]
fn invalid_seen_fraction_exits_2_naming_the_field() {
    let w = Workspace::new(r#"{"data": {"seen_fraction": 1.5}}"#);
    let out = vaps(&["gen-data", "--config", s(&w.config()), "--out", s(&w.path("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seen_fraction"));
}

#[test]
fn unknown_flags_and_keys_exit_2() {
    assert_eq!(vaps(&["train", "--bogus"]).status.code(), Some(2));
    let w = Workspace::new(TINY);
    w.gen();
    std::fs::write(w.config(), r#"{"run": {"epochz": 1}}"#).unwrap();
    let out = vaps(&["train", "--config", s(&w.config()), "--data", s(&w.data()), "--out", s(&w.path("t"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_is_deterministic() {
    let w = Workspace::new(TINY);
    let a = w.path("a");
    let b = w.path("b");
    for out in [&a, &b] {
        ok(&["gen-data", "--config", s(&w.config()), "--out", s(out), "--seed", "9"]);
    }
    for f in ["data.vapsfeat", "data.labels.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let other = w.path("c");
    ok(&["gen-data", "--config", s(&w.config()), "--out", s(&other), "--seed", "10"]);
    assert_ne!(
        std::fs::read(a.join("data.vapsfeat")).unwrap(),
        std::fs::read(other.join("data.vapsfeat")).unwrap()
    );
}

#[test]
fn zero_epochs_writes_the_initial_model() {
    let w = Workspace::new(TINY);
    w.gen();
    let out = w.train("t", &["--epochs", "0"]);
    let ckpt = Checkpoint::load(&out.join("model.vapsckpt")).unwrap();
    assert_eq!(ckpt.step(), 0);
    let init = VapsModel::init(&ckpt.model.config, 3, 4).unwrap();
    assert_eq!(ckpt.model, init);
}

#[test]
fn training_lowers_the_logged_loss() {
    let w = Workspace::new(TINY);
    w.gen();
    let out = w.train("t", &["--epochs", "10"]);
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("step,l_att,l_obj,l_sp,l_ret,l_total"));
    let totals: Vec<f64> = lines
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(totals.last().unwrap() < totals.first().unwrap(), "{totals:?}");
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["details"]["frozen_hash_before"], manifest["details"]["frozen_hash_after"]);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
}

#[test]
fn ablation_switch_is_recorded() {
    let w = Workspace::new(TINY);
    w.gen();
    let out = w.train("t", &["--ablate", "no-pr", "--epochs", "1"]);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["details"]["ablation"], "no-pr");
    assert_eq!(manifest["config"]["use_repository"], false);
    assert_eq!(manifest["config"]["use_adapter"], true);
}

#[test]
fn noiseless_training_data_is_fitted() {
    let cfg = TINY.replace(r#""basis_std": 1.0"#, r#""basis_std": 1.0, "noise": 0.0"#);
    let w = Workspace::new(&cfg);
    w.gen();
    let t = w.train("t", &["--epochs", "30"]);
    let e = w.path("e");
    ok(&[
        "eval", "--ckpt", s(&t.join("model.vapsckpt")), "--data", s(&w.data()),
        "--out", s(&e), "--split", "train",
    ]);
    let m = read_json(&e.join("metrics.json"));
    let seen = m["seen_acc"].as_f64().unwrap();
    assert!(seen >= 0.95, "train-split seen accuracy {seen}");
    assert!(m["metrics"].is_null(), "train split has no unseen labels");
}

#[test]
fn open_world_without_filtering_ignores_the_threshold_value() {
    let w = Workspace::new(TINY);
    w.gen();
    let t = w.train("t", &[]);
    let ckpt = t.join("model.vapsckpt");
    let run = |out: &str, threshold: &str| {
        let out = w.path(out);
        ok(&[
            "eval", "--ckpt", s(&ckpt), "--data", s(&w.data()), "--out", s(&out),
            "--mode", "open", "--threshold", threshold,
        ]);
        out
    };
    // Feasibility scores are cosines in [-1, 1], so -1 filters nothing.
    let a = run("inf", "-inf");
    let b = run("minus1", "-1");
    assert_eq!(
        std::fs::read(a.join("curve.csv")).unwrap(),
        std::fs::read(b.join("curve.csv")).unwrap()
    );
    let m = read_json(&a.join("metrics.json"));
    assert_eq!(m["n_pairs"], 12);
    assert_eq!(read_json(&a.join("manifest.json"))["details"]["threshold_applied"], "-inf");
}

#[test]
fn eval_errors_map_to_exit_codes() {
    let w = Workspace::new(TINY);
    w.gen();
    let out = vaps(&["eval", "--ckpt", s(&w.path("missing.vapsckpt")), "--data", s(&w.data()), "--out", s(&w.path("e"))]);
    assert_eq!(out.status.code(), Some(2));
    let t = w.train("t", &["--epochs", "0"]);
    let bad = vaps(&[
        "eval", "--ckpt", s(&t.join("model.vapsckpt")), "--data", s(&w.data()), "--out", s(&w.path("e")),
        "--threshold", "soon",
    ]);
    assert_eq!(bad.status.code(), Some(2));
    std::fs::write(w.path("junk.vapsckpt"), b"VAPSCKPTjunk").unwrap();
    let junk = vaps(&["eval", "--ckpt", s(&w.path("junk.vapsckpt")), "--data", s(&w.data()), "--out", s(&w.path("e"))]);
    assert_eq!(junk.status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let w = Workspace::new(TINY);
    w.gen();
    let out = vaps(&[
        "train", "--config", s(&w.config()), "--data", s(&w.data()), "--out", s(&w.path("t")),
        "--lr", "1e200", "--epochs", "3",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn single_seed_ablation_has_four_rows() {
    let w = Workspace::new(TINY);
    w.gen();
    let out = w.path("abl");
    ok(&["ablate", "--config", s(&w.config()), "--data", s(&w.data()), "--out", s(&out), "--seeds", "1", "--epochs", "1"]);
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,seed,S,U,H,AUC,seen_acc,unseen_acc,final_loss");
    let variants: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["full", "no-pr", "no-pa", "no-ca"]);
    for l in &lines[1..] {
        assert_eq!(l.split(',').count(), 9);
        for field in l.split(',').skip(1) {
            field.parse::<f64>().unwrap();
        }
    }
}

fn csv_column(line: &str, header: &str, name: &str) -> f64 {
    let i = header.split(',').position(|h| h == name).unwrap();
    line.split(',').nth(i).unwrap().parse().unwrap()
}

#[test]
fn sweep_grid_and_single_cell_consistency() {
    let w = Workspace::new(TINY);
    w.gen();
    let out = w.path("sw");
    ok(&[
        "sweep", "--config", s(&w.config()), "--data", s(&w.data()), "--out", s(&out),
        "--M", "4,5", "--N", "1,2", "--epochs", "1",
    ]);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    let grid: Vec<(&str, &str)> = lines[1..]
        .iter()
        .map(|l| {
            let mut f = l.split(',');
            (f.next().unwrap(), f.next().unwrap())
        })
        .collect();
    assert_eq!(grid, [("4", "1"), ("4", "2"), ("5", "1"), ("5", "2")]);
    let cells = read_json(&out.join("manifest.json"))["details"]["cells"].clone();
    assert_eq!(cells.as_array().unwrap().len(), 4);
    assert!(cells.as_array().unwrap().iter().all(|c| c["seed"] == 0));

    // A one-cell sweep equals train followed by eval with the same settings.
    let single = w.path("one");
    ok(&[
        "sweep", "--config", s(&w.config()), "--data", s(&w.data()), "--out", s(&single),
        "--M", "4", "--N", "2", "--epochs", "2",
    ]);
    let t = w.train("t", &["--epochs", "2"]);
    let e = w.path("e");
    ok(&["eval", "--ckpt", s(&t.join("model.vapsckpt")), "--data", s(&w.data()), "--out", s(&e)]);
    let m = read_json(&e.join("metrics.json"));
    let csv = std::fs::read_to_string(single.join("sweep.csv")).unwrap();
    let (header, row) = csv.split_once('\n').unwrap();
    for (col, key) in [("S", "S"), ("U", "U"), ("H", "H"), ("AUC", "AUC")] {
        assert_eq!(csv_column(row.trim(), header, col), m["percent"][key].as_f64().unwrap(), "{col}");
    }
    assert_eq!(csv_column(row.trim(), header, "unseen_acc"), m["unseen_acc"].as_f64().unwrap());
}

#[test]
fn inspect_reports_parameters() {
    let w = Workspace::new(TINY);
    w.gen();
    let t = w.train("t", &["--epochs", "1"]);
    let out = ok(&["inspect-ckpt", "--ckpt", s(&t.join("model.vapsckpt")), "--out", s(&w.path("i"))]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let params = v["params"].as_array().unwrap();
    assert_eq!(params[0]["name"], "text_encoder.projection");
    assert_eq!(params[0]["trainable"], false);
    assert!(v["step"].as_u64().unwrap() > 0);
    assert!(w.path("i/manifest.json").is_file());
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let w = Workspace::new(TINY);
    w.gen();
    let a = w.train("a", &[]);
    let b = w.train("b", &[]);
    assert_eq!(
        std::fs::read(a.join("model.vapsckpt")).unwrap(),
        std::fs::read(b.join("model.vapsckpt")).unwrap()
    );
}
