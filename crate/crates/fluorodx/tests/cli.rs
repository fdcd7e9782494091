use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fluorodx::io::{load_manifest, read_image};
use fluorodx_core::{Split, Variant};
use serde_json::Value;

fn fluorodx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluorodx"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = fluorodx(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap();
    serde_json::from_str(line).unwrap()
}

/// A small corpus and a fast configuration in `dir`; returns the config path.
fn setup(dir: &Path, workspace: &str) -> PathBuf {
    let corpus = dir.join("corpus");
    if !corpus.exists() {
        ok(&[
            "synth",
            "--out",
            corpus.to_str().unwrap(),
            "--positives",
            "16",
            "--negatives",
            "8",
            "--size",
            "48",
            "--seed",
            "7",
        ]);
    }
    let config = dir.join(format!("{workspace}.toml"));
    std::fs::write(
        &config,
        format!(
            r#"seed = 11

[paths]
raw_images = "corpus/raw"
annotations = "corpus/annotations"
workspace = "{workspace}"

[augmentation]
copies_per_image = 2

[training]
max_epochs = 2

[sweep]
architectures = ["EfficientNetB0"]
strategies = ["GeometricColor"]
variants = ["SDP"]
folds = 2
"#
        ),
    )
    .unwrap();
    config
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_writes_the_requested_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "synth",
        "--out",
        dir.path().to_str().unwrap(),
        "--positives",
        "3",
        "--negatives",
        "2",
        "--size",
        "32",
    ]);
    assert!(out.starts_with("5 images"));
    assert_eq!(std::fs::read_dir(dir.path().join("raw/positive")).unwrap().count(), 3);
    assert_eq!(std::fs::read_dir(dir.path().join("annotations")).unwrap().count(), 5);
}

#[test]
fn prepare_and_augment_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = setup(dir.path(), "a");
    let b = setup(dir.path(), "b");
    for cfg in [&a, &b] {
        let cfg = cfg.to_str().unwrap();
        let out = ok(&["prepare", "--config", cfg]);
        assert!(out.contains("FFI 24 records"), "{out}");
        let out = ok(&["augment", "--config", cfg]);
        assert!(out.contains("SDP GeometricColor"), "{out}");
    }
    let (fa, fb) = (files(&dir.path().join("a")), files(&dir.path().join("b")));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);

    // Rerunning in place rewrites identical bytes.
    ok(&["prepare", "--config", a.to_str().unwrap()]);
    ok(&["augment", "--config", a.to_str().unwrap()]);
    assert_eq!(files(&dir.path().join("a")), fa);

    let sdp = load_manifest(&dir.path().join("a/manifests/SDP.csv")).unwrap();
    assert_eq!(sdp.variant, Variant::Sdp);
    let train = load_manifest(&dir.path().join("a/manifests/SDP_train_GeometricColor.csv")).unwrap();
    let originals = sdp.split_subset(Split::Train).len();
    assert_eq!(train.len(), originals * 3);
}

#[test]
fn seed_override_changes_the_split() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "w");
    let cfg = cfg.to_str().unwrap();
    ok(&["prepare", "--config", cfg]);
    let first = std::fs::read(dir.path().join("w/manifests/FFI.csv")).unwrap();
    ok(&["prepare", "--config", cfg, "--seed", "12"]);
    let second = std::fs::read(dir.path().join("w/manifests/FFI.csv")).unwrap();
    assert_ne!(first, second);
}

#[test]
fn end_to_end_sweep_train_and_explain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "w");
    let cfg = cfg.to_str().unwrap();
    ok(&["prepare", "--config", cfg]);
    ok(&["augment", "--config", cfg]);
    let table = ok(&["sweep", "--config", cfg]);
    assert!(table.contains("EfficientNetB0"), "{table}");
    let ws = dir.path().join("w");
    let result = ws.join("results/SDP_EfficientNetB0_GeometricColor.json");
    let stored = std::fs::read(&result).unwrap();
    ok(&["sweep", "--config", cfg, "--resume"]);
    assert_eq!(std::fs::read(&result).unwrap(), stored);

    let out = ok(&["train-final", "--config", cfg]);
    assert!(out.starts_with("SDP_EfficientNetB0_GeometricColor model_id="), "{out}");
    for f in ["model.safetensors", "model.json", "test_metrics.json", "history.csv", "loss_curve.png"] {
        assert!(ws.join("final").join(f).is_file(), "{f}");
    }
    let report: Value = serde_json::from_slice(&std::fs::read(ws.join("final/test_metrics.json")).unwrap()).unwrap();
    let meta: Value = serde_json::from_slice(&std::fs::read(ws.join("final/model.json")).unwrap()).unwrap();
    assert_eq!(report["model_id"], meta["checkpoint_digest"]);

    let image = dir.path().join("corpus/raw/positive/pos_000.png");
    let overlay = PathBuf::from(ok(&["explain", "--config", cfg, image.to_str().unwrap()]).trim());
    assert_eq!(overlay, ws.join("explain/pos_000.png"));
    let img = read_image(&overlay).unwrap();
    assert_eq!((img.width(), img.height()), (48, 48));
    let sidecar = std::fs::read_to_string(ws.join("explain/pos_000.cam.txt")).unwrap();
    assert!(sidecar.starts_with("# layer=features.8"), "{sidecar}");
}

#[test]
fn configuration_errors_exit_with_status_2_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "w");
    let cfg = cfg.to_str().unwrap();
    let out = fluorodx(&["train-final", "--config", cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"]["code"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("sweep"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "seed = 1\n[paths]\nraw_images = \"r\"\nannotations = \"a\"\nworkspace = \"w\"\n[split]\ntrain = 0.9\nval = 0.9\ntest = 0.9\n",
    )
    .unwrap();
    let out = fluorodx(&["prepare", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["code"], "config");
}

#[test]
fn missing_inputs_exit_with_status_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = fluorodx(&["prepare", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["code"], "io");
}
