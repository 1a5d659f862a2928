use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fgmatch::trainer::load_checkpoint;

fn fgmatch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgmatch"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path) {
    ok(&fgmatch(
        dir,
        &[
            "synth", "--out", "data", "--seed", "7", "--coarse-train", "60", "--coarse-test", "30",
            "--train-items", "300", "--eval-items", "80",
        ],
    ));
}

#[test]
fn synth_requires_out_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let out = fgmatch(dir.path(), &["synth", "--dim", "64"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));

    synth(dir.path());
    let first: Vec<(String, Vec<u8>)> = fs::read_dir(dir.path().join("data"))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    assert_eq!(first.len(), 13);
    synth(dir.path());
    for (name, bytes) in first {
        assert_eq!(fs::read(dir.path().join("data").join(&name)).unwrap(), bytes, "{name}");
    }

    let out = fgmatch(dir.path(), &["synth", "--out", "x", "--attributes", "5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_rejects_bad_heads() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = fgmatch(
        dir.path(),
        &["train", "--stage", "warmup", "--head", "transformer", "--manifest", "data/coarse_train.json", "--out", "w.ckpt"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for kind in ["cosine", "linear-both", "linear-text", "linear-visual", "mlp", "mha"] {
        assert!(err.contains(kind), "{err}");
    }

    let out = fgmatch(
        dir.path(),
        &["train", "--stage", "warmup", "--head", "cosine", "--manifest", "data/coarse_train.json", "--out", "w.ckpt"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no trainable parameters"));

    let out = fgmatch(
        dir.path(),
        &["train", "--stage", "warmup", "--head", "linear-both", "--manifest", "data/coarse_train.json", "--out", "w.ckpt", "--epochs", "0"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn two_stage_pipeline_with_baseline_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    ok(&fgmatch(
        d,
        &["train", "--stage", "warmup", "--head", "linear-both", "--manifest", "data/coarse_train.json", "--out", "warmup.ckpt", "--epochs", "2", "--seed", "1"],
    ));
    let log = fs::read_to_string(d.join("warmup.ckpt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let line: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "stage", "mean_loss", "seconds"] {
        assert!(line.get(key).is_some(), "{line}");
    }

    ok(&fgmatch(
        d,
        &["eval", "--checkpoint", "warmup.ckpt", "--vocab", "data/vocab_eval.json", "--coarse", "data/coarse_test.json", "--out", "warmup.json"],
    ));
    ok(&fgmatch(
        d,
        &["train", "--stage", "finetune", "--from", "warmup.ckpt", "--manifest", "data/vocab_train.json", "--out", "ft.ckpt", "--epochs", "2", "--lr", "1e-3"],
    ));
    let table = ok(&fgmatch(
        d,
        &["eval", "--checkpoint", "ft.ckpt", "--vocab", "data/vocab_eval.json", "--coarse", "data/coarse_test.json", "--baseline", "warmup.json", "--out", "ft.json"],
    ));
    assert!(table.contains("linear-both") && table.contains(" ("), "{table}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ft.json")).unwrap()).unwrap();
    assert_eq!(report["head"], "linear-both");
    assert!(report["deltas"]["mean_rank"].is_number());
    assert_eq!(report["config"]["training"]["config"]["lr"], 1e-3);

    // the resumed head kind is preserved and mismatches are refused
    let out = fgmatch(
        d,
        &["train", "--stage", "finetune", "--from", "warmup.ckpt", "--head", "mha", "--manifest", "data/vocab_train.json", "--out", "bad.ckpt"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind mismatch"));

    // a baseline computed on other data cannot give deltas
    ok(&fgmatch(d, &["eval", "--head", "cosine", "--vocab", "data/vocab_train.json", "--out", "other.json"]));
    let out = fgmatch(
        d,
        &["eval", "--checkpoint", "ft.ckpt", "--vocab", "data/vocab_eval.json", "--baseline", "other.json", "--out", "x.json"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cosine_eval_needs_no_checkpoint_and_empty_data_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let table = ok(&fgmatch(d, &["eval", "--head", "cosine", "--vocab", "data/vocab_eval.json", "--out", "cos.json"]));
    assert!(table.contains("cosine"));
    let out = fgmatch(d, &["eval", "--head", "mlp", "--vocab", "data/vocab_eval.json", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(2));

    let manifest = r#"{"dim": 64, "image_table": "data/vocab_eval_images.fgeb",
        "text_table": "data/vocab_eval_texts.fgeb", "benchmark": "custom", "n_negatives": 10, "vocab_items": []}"#;
    fs::write(d.join("empty.json"), manifest).unwrap();
    let out = fgmatch(d, &["eval", "--head", "cosine", "--vocab", "empty.json", "--out", "e.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn resumed_cli_run_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let base = ["train", "--stage", "finetune", "--head", "linear-both", "--manifest", "data/vocab_train.json", "--lr", "1e-3"];
    let run = |extra: &[&str]| ok(&fgmatch(d, &[&base[..], extra].concat()));
    run(&["--out", "plain.ckpt", "--epochs", "3"]);
    run(&["--out", "full.ckpt", "--epochs", "3", "--checkpoint-every", "1"]);
    let plain = load_checkpoint(d.join("plain.ckpt")).unwrap();
    let full = load_checkpoint(d.join("full.ckpt")).unwrap();
    assert!(plain.head == full.head && plain.adam == full.adam);

    ok(&fgmatch(
        d,
        &["train", "--stage", "finetune", "--resume", "full.epoch-1.ckpt", "--manifest", "data/vocab_train.json", "--out", "resumed.ckpt"],
    ));
    assert!(fs::read(d.join("full.ckpt")).unwrap() == fs::read(d.join("resumed.ckpt")).unwrap());
}

#[test]
fn thread_count_does_not_change_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let eval = |threads: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_fgmatch"))
            .current_dir(d)
            .env("FGMATCH_THREADS", threads)
            .args(["eval", "--head", "cosine", "--vocab", "data/vocab_eval.json", "--coarse", "data/coarse_test.json", "--out", out])
            .output()
            .unwrap();
        o.status.code()
    };
    assert_eq!(eval("1", "one.json"), Some(0));
    assert_eq!(eval("3", "three.json"), Some(0));
    assert_eq!(fs::read(d.join("one.json")).unwrap(), fs::read(d.join("three.json")).unwrap());
    assert_eq!(eval("zero", "bad.json"), Some(1));
}
