use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn gfd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

/// The last stderr line is the structured error.
fn error_kind(out: &Output) -> String {
    assert_eq!(
        out.status.code(),
        Some(1),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let v: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    v["error"]["kind"].as_str().unwrap().to_string()
}

const TINY: &[&str] = &[
    "--max-iters=2",
    "--pretrain-c-iters=1",
    "--batch-size=3",
    "--crop=16",
    "--set=train.val_every=0",
    "--set=model.generator.base_channels=4",
    "--set=model.generator.depth=3",
    "--set=model.discriminator.base_channels=4",
    r#"--set=model.classifier={"backbone":"resnet","base_channels":4,"depth":5,"blocks":[1,1,1,1]}"#,
    r#"--set=model.perceptual.weights={"seeded":0}"#,
    "--set=model.perceptual.width_divisor=16",
];

fn toy_and_run(dir: &Path) -> PathBuf {
    stdout_json(&gfd(
        &["toy-data", "--out", "toy", "--pool-size", "60"],
        dir,
    ));
    let mut args = vec![
        "--log-level",
        "warn",
        "train",
        "--manifest",
        "toy/manifest.json",
        "--out",
        "run",
    ];
    args.extend_from_slice(TINY);
    let summary = stdout_json(&gfd(&args, dir));
    assert_eq!(summary["iterations"], 2);
    dir.join(summary["final_checkpoint"].as_str().unwrap())
}

#[test]
fn unknown_subcommand_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = gfd(&["bogus"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn open_world_eval_needs_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = gfd(&["eval", "--ckpt", "missing", "--mode", "open"], dir.path());
    assert_eq!(error_kind(&out), "config");
}

#[test]
fn structured_errors_name_their_kind() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        error_kind(&gfd(
            &["detect", "--ckpt", "nowhere", "--image", "x.png"],
            dir.path()
        )),
        "checkpoint"
    );
    assert_eq!(
        error_kind(&gfd(
            &["train", "--config", "absent.json", "--out", "o"],
            dir.path()
        )),
        "missing_file"
    );
    std::fs::write(dir.path().join("bad.json"), r#"{"train": {"bogus": 1}}"#).unwrap();
    assert_eq!(
        error_kind(&gfd(
            &["train", "--config", "bad.json", "--out", "o"],
            dir.path()
        )),
        "config"
    );
    assert_eq!(
        error_kind(&gfd(
            &["train", "--ablation", "G+X", "--out", "o"],
            dir.path()
        )),
        "config"
    );
    assert_eq!(
        error_kind(&gfd(
            &[
                "--device",
                "cuda",
                "analyze-glcm",
                "--fp-dir",
                ".",
                "--out",
                "g.csv"
            ],
            dir.path()
        )),
        "config"
    );
}

#[test]
fn train_then_every_inference_command() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let ckpt = toy_and_run(dir);
    let ckpt = ckpt.to_str().unwrap();
    assert!(dir.join("run/run_config.json").is_file());
    assert!(dir.join("run/metrics.jsonl").is_file());

    let eval = gfd(
        &[
            "eval",
            "--ckpt",
            ckpt,
            "--manifest",
            "toy/manifest.json",
            "--report",
            "rep.json",
        ],
        dir,
    );
    assert!(eval.status.success());
    let rep: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("rep.json")).unwrap()).unwrap();
    assert_eq!(rep["labels"], serde_json::json!(["real", "ganA", "ganB"]));
    assert_eq!(rep["confusion"].as_array().unwrap().len(), 3);

    let img = "toy/ganA/test/0054.png";
    let pred = stdout_json(&gfd(&["attribute", "--ckpt", ckpt, "--image", img], dir));
    assert!(["real", "ganA", "ganB"].contains(&pred["label"].as_str().unwrap()));
    let det = stdout_json(&gfd(&["detect", "--ckpt", ckpt, "--image", img], dir));
    let score = det["score"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));
    assert_eq!(det["label"] == "fake", score > 0.5);

    let fp = stdout_json(&gfd(
        &[
            "extract-fp",
            "--ckpt",
            ckpt,
            "--image",
            img,
            "--out",
            "fps/ganA/a",
        ],
        dir,
    ));
    assert_eq!(fp["shape"], serde_json::json!([3, 16, 16]));
    stdout_json(&gfd(
        &[
            "extract-fp",
            "--ckpt",
            ckpt,
            "--image",
            "toy/ganB/test/0054.png",
            "--out",
            "fps/ganB/b",
        ],
        dir,
    ));

    let comp = stdout_json(&gfd(
        &[
            "composite",
            "--fp",
            "fps/ganA/a.npy",
            "--carrier",
            "toy/real/test/0054.png",
            "--center-crop",
            "--out",
            "comp",
        ],
        dir,
    ));
    assert!(dir.join(comp["png"].as_str().unwrap()).is_file());
    let uncropped = gfd(
        &[
            "composite",
            "--fp",
            "fps/ganA/a.npy",
            "--carrier",
            "toy/real/test/0054.png",
            "--out",
            "c2",
        ],
        dir,
    );
    assert_eq!(error_kind(&uncropped), "shape_mismatch");

    // The default distances reach 16 pixels, too far for a 16px fingerprint.
    assert_eq!(
        error_kind(&gfd(
            &["analyze-glcm", "--fp-dir", "fps", "--out", "glcm.csv"],
            dir
        )),
        "offset_too_large"
    );
    std::fs::write(dir.join("glcm.json"), r#"{"glcm": {"distances": [2, 4]}}"#).unwrap();
    let glcm = stdout_json(&gfd(
        &[
            "analyze-glcm",
            "--fp-dir",
            "fps",
            "--config",
            "glcm.json",
            "--out",
            "glcm.csv",
        ],
        dir,
    ));
    assert_eq!(glcm["fingerprints"], 2);
    assert_eq!(glcm["sources"]["ganA"]["count"], 1);
    let csv = std::fs::read_to_string(dir.join("glcm.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "file,source,d2_a0,d2_a45,d2_a90,d2_a135,d4_a0,d4_a45,d4_a90,d4_a135"
    );
    assert!(csv.contains("# summary"));
}
