use std::path::Path;
use std::process::{Command, Output};

fn lpnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpnet"))
        .args(args)
        .current_dir(dir)
        .env_remove("LPNET_SEED")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = lpnet(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SYNTH: &str = "resolution = 32\nnum_figures = 2\nnum_backgrounds = 1\ntrain_poses = 4\ntest_poses = 2\n";

const TRAIN: &str = r#"dataset = "data"
output = "run"
resolution = 32
batch_size = 2
steps = 4
disc_width = 4
checkpoint_every = 2

[model]
fg_widths = [4, 4, 6, 6]
adcnet_width = 4
adcnet_hidden = 8
bg_widths = [4, 4, 6]
bg_res_blocks = 1
"#;

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("synth.toml"), SYNTH).unwrap();
    std::fs::write(d.join("train.toml"), TRAIN).unwrap();

    let msg = ok(d, &["gen-data", "--out", "data", "--config", "synth.toml", "--tiny"]);
    assert!(msg.contains("12 frames"), "{msg}");
    assert!(d.join("data/manifest.jsonl").exists());
    assert!(d.join("data/frames/train_00000.png").exists());

    ok(d, &["train", "--config", "train.toml", "--every", "0"]);
    let log = std::fs::read_to_string(d.join("run/loss.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);

    // Continue to six steps; the first four lines are kept verbatim.
    ok(
        d,
        &[
            "train",
            "--config",
            "train.toml",
            "--steps",
            "6",
            "--resume",
            "--every",
            "0",
        ],
    );
    let longer = std::fs::read_to_string(d.join("run/loss.jsonl")).unwrap();
    assert_eq!(longer.lines().count(), 6);

    let report: serde_json::Value = serde_json::from_str(&ok(
        d,
        &[
            "eval",
            "--checkpoint",
            "run/checkpoint.bin",
            "--dataset",
            "data",
            "--grid",
            "grid.png",
        ],
    ))
    .unwrap();
    assert_eq!(report["split"], "test");
    assert!(report["ssim"].as_f64().unwrap() <= 1.0);
    assert!(d.join("grid.png").exists());

    ok(
        d,
        &[
            "transfer",
            "--checkpoint",
            "run/checkpoint.bin",
            "--dataset",
            "data",
            "--source",
            "0",
            "--target",
            "9",
            "--out",
            "t.png",
        ],
    );
    assert!(d.join("t.png").exists());

    ok(d, &["render", "--dataset", "data", "--index", "2", "--out", "dbg"]);
    for f in ["coverage.png", "faces.png", "coords.png"] {
        assert!(d.join("dbg").join(f).exists(), "{f}");
    }
}

#[test]
fn seed_override_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("synth.toml"), SYNTH).unwrap();
    std::fs::write(d.join("train.toml"), TRAIN).unwrap();
    ok(d, &["gen-data", "--out", "data", "--config", "synth.toml", "--tiny"]);
    ok(d, &["train", "--config", "train.toml", "--steps", "1", "--every", "0"]);
    let a = std::fs::read_to_string(d.join("run/loss.jsonl")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_lpnet"))
        .args([
            "train",
            "--config",
            "train.toml",
            "--steps",
            "1",
            "--every",
            "0",
            "--output",
            "run2",
        ])
        .current_dir(d)
        .env("LPNET_SEED", "99")
        .output()
        .unwrap();
    assert!(out.status.success());
    let b = std::fs::read_to_string(d.join("run2/loss.jsonl")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn gradcheck_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = ok(d, &["gradcheck", "--scope", "losses.rec", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v[0]["passed"], true);

    assert_eq!(lpnet(d, &["gradcheck", "--scope", "nope"]).status.code(), Some(2));
    assert_eq!(lpnet(d, &["train", "--config", "missing.toml"]).status.code(), Some(2));
    assert_eq!(
        lpnet(d, &["eval", "--checkpoint", "x", "--dataset", "y"]).status.code(),
        Some(2)
    );
    assert!(!lpnet(d, &["bogus"]).status.success());
}
