use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

use coata::data_io::load_dataset;
use coata::pipeline::{train_baseline, RunConfig};

fn coata(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coata"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Small planted-partition dataset plus a config file with `extra` keys.
fn setup(extra: &str) -> (TempDir, PathBuf, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("sbm");
    let out = coata(&[
        "generate-sbm",
        "--nodes",
        "120",
        "--degree",
        "4",
        "--seed",
        "3",
        "--out",
        path_str(&data),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let config = tmp.path().join("config.json");
    fs::write(&config, format!("{{\"epochs\": 30{extra}}}")).unwrap();
    (tmp, data, config)
}

fn edge_count(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn augment_writes_both_channels_near_original_size() {
    let (tmp, data, config) = setup("");
    let out_dir = tmp.path().join("run");
    let out = coata(&[
        "augment",
        "--config",
        path_str(&config),
        "--data",
        path_str(&data),
        "--out",
        path_str(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let original = edge_count(&data.join("edges.tsv")) as f64;
    let knn = edge_count(&out_dir.join("augmented_edges.knn.tsv")) as f64;
    assert!(out_dir.join("augmented_edges.edgemod.tsv").is_file());
    assert!(
        (knn - original).abs() <= 0.2 * original,
        "knn {knn} vs original {original}"
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("total pushes"));
    let snapshot =
        RunConfig::from_json(&fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot.epochs, 30);
}

#[test]
fn zero_modification_budget_keeps_the_input_edges() {
    let (tmp, data, config) = setup(r#", "channels": ["edge_mod"], "k_add": 0, "k_del": 0"#);
    let out_dir = tmp.path().join("run");
    let out = coata(&[
        "augment",
        "--config",
        path_str(&config),
        "--data",
        path_str(&data),
        "--out",
        path_str(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        fs::read_to_string(out_dir.join("augmented_edges.edgemod.tsv")).unwrap(),
        fs::read_to_string(data.join("edges.tsv")).unwrap()
    );
}

#[test]
fn missing_dataset_is_a_usage_error_naming_the_path() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("no_such_dataset");
    let out = coata(&[
        "augment",
        "--data",
        path_str(&missing),
        "--out",
        path_str(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_dataset"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let (tmp, data, _) = setup("");
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"epoch": 3}"#).unwrap();
    let out = coata(&[
        "train",
        "--config",
        path_str(&bad),
        "--data",
        path_str(&data),
        "--out",
        path_str(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_epochs_writes_header_only_metrics() {
    let (tmp, data, _) = setup("");
    let config = tmp.path().join("zero.json");
    fs::write(&config, r#"{"epochs": 0}"#).unwrap();
    let out_dir = tmp.path().join("run");
    let out = coata(&[
        "train",
        "--config",
        path_str(&config),
        "--data",
        path_str(&data),
        "--out",
        path_str(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
}

fn summary_test_acc(dir: &Path) -> f64 {
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    v["test_acc"].as_f64().unwrap()
}

#[test]
fn zero_weights_match_the_plain_reference() {
    let (tmp, data, config) =
        setup(r#", "lambda_ce_aug": 0.0, "lambda_co": 0.0, "lambda_dpa": 0.0"#);
    let out_dir = tmp.path().join("run");
    let out = coata(&[
        "train",
        "--config",
        path_str(&config),
        "--data",
        path_str(&data),
        "--out",
        path_str(&out_dir),
        "--seed",
        "5",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let cfg =
        RunConfig::from_json(&fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    let ds = load_dataset(&data).unwrap();
    let reference = train_baseline(&ds, &cfg, None).unwrap().test_acc;
    assert!((summary_test_acc(&out_dir) - reference).abs() <= 1e-10);
}

#[test]
fn deterministic_runs_reproduce_from_the_snapshot() {
    let (tmp, data, config) = setup("");
    let first = tmp.path().join("a");
    let second = tmp.path().join("b");
    let out = coata(&[
        "train",
        "--deterministic",
        "--config",
        path_str(&config),
        "--data",
        path_str(&data),
        "--out",
        path_str(&first),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let snapshot = first.join("config.json");
    let out = coata(&[
        "train",
        "--config",
        path_str(&snapshot),
        "--out",
        path_str(&second),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in [
        "metrics.csv",
        "checkpoint.json",
        "embeddings.tsv",
        "augmented_edges.knn.tsv",
    ] {
        assert_eq!(
            fs::read(first.join(file)).unwrap(),
            fs::read(second.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn eval_reproduces_training_accuracy() {
    let (tmp, data, config) = setup(r#", "prediction": "ensemble""#);
    let run = tmp.path().join("run");
    let out = coata(&[
        "train",
        "--config",
        path_str(&config),
        "--data",
        path_str(&data),
        "--out",
        path_str(&run),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ckpt = run.join("checkpoint.json");
    let out = coata(&[
        "eval",
        "--config",
        path_str(&config),
        "--data",
        path_str(&data),
        "--checkpoint",
        path_str(&ckpt),
        "--augmented",
        path_str(&run),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains(&format!("test_acc {:.4}", summary_test_acc(&run))),
        "{stdout}"
    );
}

#[test]
fn train_reuses_precomputed_augmentation() {
    let (tmp, data, config) = setup("");
    let aug = tmp.path().join("aug");
    let fresh = tmp.path().join("fresh");
    let reused = tmp.path().join("reused");
    let args = ["--config", path_str(&config), "--data", path_str(&data)];
    assert!(
        coata(&[&["augment", "--out", path_str(&aug)], &args[..]].concat())
            .status
            .success()
    );
    assert!(
        coata(&[&["train", "--out", path_str(&fresh)], &args[..]].concat())
            .status
            .success()
    );
    let out = coata(
        &[
            &[
                "train",
                "--augmented",
                path_str(&aug),
                "--out",
                path_str(&reused),
            ],
            &args[..],
        ]
        .concat(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        fs::read(fresh.join("metrics.csv")).unwrap(),
        fs::read(reused.join("metrics.csv")).unwrap()
    );
}

#[test]
fn sweep_emits_one_row_per_grid_point_and_repeats_exactly() {
    let (tmp, data, config) = setup(r#", "hidden": 8"#);
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let out = coata(&[
            "sweep",
            "--config",
            path_str(&config),
            "--data",
            path_str(&data),
            "--out",
            path_str(&dir),
            "--alphas",
            "0.1,0.2,0.3",
            "--betas",
            "0.2,0.4,0.6",
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        fs::read_to_string(dir.join("sweep.csv")).unwrap()
    };
    let a = run("a");
    assert_eq!(a.lines().count(), 10);
    assert_eq!(a, run("b"));
}

#[test]
fn selftest_passes_and_reports_injected_faults() {
    let out = coata(&["selftest"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("margin"));
    let out = coata(&["selftest", "--inject-fault", "gradient"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gradient_fd"));
}

#[test]
fn gradcheck_passes() {
    let out = coata(&["gradcheck", "--instances", "3"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}
