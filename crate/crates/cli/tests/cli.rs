use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().unwrap()
}

fn trg(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_trg"))
        .args(args)
        .env("TRG_THREADS", "2")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "trg {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A run config small enough to train in a couple of seconds.
fn tiny_config(dir: &Path) -> PathBuf {
    let f = fixtures();
    let cfg = serde_json::json!({
        "train_dir": dir.join("data/train"),
        "test_dir": dir.join("data/test"),
        "topology": f.join("topology/synth8.json"),
        "joint_embeddings": f.join("embeddings/synth_joints.trge"),
        "action_embeddings": f.join("embeddings/synth_actions.trge"),
        "output_dir": dir.join("run"),
        "model": {"channels": 8, "graph_channels": 4, "merge_channels": 2, "heads": 2, "head_dim": 4,
                  "layers": 2, "class_stages": 1, "boundary_stages": 1, "refine_layers": 2},
        "train": {"epochs": 2, "batch_size": 2, "seed": 3},
        "synth": {"classes": 3, "sequences": 4, "frames": 40, "min_segments": 2, "max_segments": 4, "seed": 3}
    });
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn config_dump_round_trips_through_the_loader() {
    let out = trg(&["config", "dump"]);
    let defaults: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(defaults["model"]["channels"], 64);
    assert_eq!(defaults["train"]["epochs"], 300);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, &out.stdout).unwrap();
    let again = trg(&["config", "dump", "--config", s(&path)]);
    let reloaded: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(reloaded["model"], defaults["model"]);
    assert_eq!(reloaded["loss"], defaults["loss"]);
}

#[test]
fn graph_build_reproduces_the_golden_graph() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.json");
    let f = fixtures();
    trg(&["graph", "build", "--embeddings", s(&f.join("embeddings/pku_joints.trge")), "--out", s(&out)]);
    let built: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let golden: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.join("golden/pku_tjg.json")).unwrap()).unwrap();
    assert_eq!(built, golden);

    trg(&["graph", "build", "--embeddings", s(&f.join("embeddings/pku_joints.trge")), "--out", s(&out),
          "--metric", "cosine", "--normalization", "sigmoid"]);
    let other: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_ne!(other, golden);
}

#[test]
fn rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.trge");
    std::fs::write(&bogus, b"not an embedding file").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_trg"))
        .args(["graph", "build", "--embeddings", s(&bogus), "--out", s(&dir.path().join("g.json"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn synth_augment_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    trg(&["synth", "--config", s(&cfg), "--out", s(&d.join("data"))]);
    for split in ["train", "test"] {
        assert!(d.join("data").join(split).is_dir());
    }
    assert!(d.join("data/topology.json").exists());

    let out = trg(&["augment", "--in", s(&d.join("data/train")), "--out", s(&d.join("aug")),
                    "--alpha", "0.5", "--beta", "0.25", "--seed", "1"]);
    let msg = String::from_utf8_lossy(&out.stdout);
    assert!(msg.contains("2 occluded, 1 rotated, 1 untouched"), "{msg}");

    trg(&["train", "--config", s(&cfg)]);
    let ckpt = d.join("run/model.trgw");
    assert!(ckpt.exists());
    assert!(d.join("run/model.json").exists());
    let log = std::fs::read_to_string(d.join("run/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(d.join("run/eval/metrics.json").exists());

    let before = std::fs::read(&ckpt).unwrap();
    let out = trg(&["eval", "--checkpoint", s(&ckpt), "--data", s(&d.join("data/test")), "--out", s(&d.join("e"))]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("acc"));
    assert_eq!(std::fs::read(&ckpt).unwrap(), before);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("e/metrics.json")).unwrap()).unwrap();
    let acc = metrics["overall"]["acc"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&acc));
    // same checkpoint and data as the post-training evaluation
    let during: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("run/eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["overall"], during["overall"]);
}
