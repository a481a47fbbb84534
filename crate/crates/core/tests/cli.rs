//! End-to-end checks of the command-line surface: exit codes, file outputs,
//! dataset round trips and resume behavior.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reticount"))
}

fn synth(dir: &Path, images: usize, seed: u64) {
    let status = bin()
        .args([
            "synth",
            "--images",
            &images.to_string(),
            "--cells",
            "8",
            "--distractors",
            "1",
            "--seed",
            &seed.to_string(),
            "--out",
        ])
        .arg(dir)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn synth_writes_dataset_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 5, 3);

    let images: Vec<_> = std::fs::read_dir(data.join("images")).unwrap().collect();
    let xmls: Vec<_> = std::fs::read_dir(data.join("annotations")).unwrap().collect();
    assert_eq!(images.len(), 5);
    assert_eq!(xmls.len(), 5);

    let manifest = std::fs::read_to_string(data.join("manifest.csv")).unwrap();
    let lines: Vec<&str> = manifest.trim().lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(
        lines[0],
        "image_id,seed,aggregate,punctate,erythrocyte,distractors"
    );
}

#[test]
fn synth_zero_images_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["synth", "--images", "0", "--out"])
        .arg(dir.path().join("x"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    synth(&a, 3, 11);
    synth(&b, 3, 11);
    {
        let name = "manifest.csv";
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap()
        );
    }
    for entry in std::fs::read_dir(a.join("images")).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name();
        assert_eq!(
            std::fs::read(entry.path()).unwrap(),
            std::fs::read(b.join("images").join(&name)).unwrap(),
            "image {name:?} differs between identical synth runs"
        );
    }
}

#[test]
fn unknown_subcommand_and_bad_suite_exit_2() {
    let status = bin().arg("frobnicate").status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = bin().args(["verify", "nonsense"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn train_missing_data_dir_exits_2() {
    let status = bin()
        .args(["train", "--data", "/nonexistent/nope", "--epochs", "1"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn train_rejects_corrupt_annotation_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 3, 2);
    // corrupt one annotation
    let victim = data.join("annotations").join("smear_0001.xml");
    std::fs::write(&victim, "<annotation><broken>").unwrap();

    let output = bin()
        .args(["train", "--epochs", "1", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("smear_0001.xml"),
        "diagnostic must name the file: {stderr}"
    );
}

#[test]
fn train_zero_epochs_writes_initial_checkpoint_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 3, 4);
    let out = dir.path().join("out");
    let status = bin()
        .args(["train", "--epochs", "0", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("latest.ckpt").exists());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.trim().lines().count(), 1, "header only");
}

#[test]
fn train_then_count_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 6, 8);
    let out = dir.path().join("train");
    let status = bin()
        .args([
            "train",
            "--epochs",
            "2",
            "--batch",
            "4",
            "--seed",
            "3",
            "--latest-only",
            "--data",
        ])
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.trim().lines().count(), 3, "header + 2 epochs");

    // count over the same images
    let count_out = dir.path().join("count");
    let status = bin()
        .args(["count", "--overlays", "--checkpoint"])
        .arg(out.join("latest.ckpt"))
        .arg("--images")
        .arg(data.join("images"))
        .arg("--out")
        .arg(&count_out)
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["report.csv", "report.txt", "detections.txt"] {
        assert!(count_out.join(f).exists(), "{f} missing");
    }
    let overlays: Vec<_> = std::fs::read_dir(count_out.join("overlays")).unwrap().collect();
    assert_eq!(overlays.len(), 6);

    // evaluate against the labels
    let eval_out = dir.path().join("eval");
    let status = bin()
        .args(["eval", "--checkpoint"])
        .arg(out.join("latest.ckpt"))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&eval_out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(eval_out.join("eval.txt")).unwrap();
    assert!(text.contains("count-ratio metric"));
    assert!(text.contains("detection-matched metric"));
}

#[test]
fn count_on_empty_directory_reports_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 3, 6);
    let out = dir.path().join("train");
    bin()
        .args(["train", "--epochs", "0", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();

    let empty = dir.path().join("empty_images");
    std::fs::create_dir_all(&empty).unwrap();
    let count_out = dir.path().join("count");
    let status = bin()
        .args(["count", "--checkpoint"])
        .arg(out.join("latest.ckpt"))
        .arg("--images")
        .arg(&empty)
        .arg("--out")
        .arg(&count_out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(count_out.join("report.txt")).unwrap();
    assert!(text.contains("undefined"), "{text}");
}

#[test]
fn count_checkpoint_shape_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.ckpt");
    // a container with a wrong-shaped entry
    let mut c = reticount::checkpoint::Container::new();
    c.push("bn/fold_count", reticount::tensor::Tensor::scalar(0.0));
    c.push(
        "block0/conv/weight",
        reticount::tensor::Tensor::zeros(&[4, 4, 3, 3]),
    );
    c.save(&bogus).unwrap();

    let images = dir.path().join("images");
    std::fs::create_dir_all(&images).unwrap();
    let output = bin()
        .args(["count", "--checkpoint"])
        .arg(&bogus)
        .arg("--images")
        .arg(&images)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("block0/conv/weight"), "{stderr}");
}

#[test]
fn resume_produces_identical_metrics_to_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 6, 13);

    let full = dir.path().join("full");
    bin()
        .args([
            "train", "--epochs", "3", "--batch", "4", "--seed", "7", "--latest-only", "--data",
        ])
        .arg(&data)
        .arg("--out")
        .arg(&full)
        .status()
        .unwrap();

    let resumed = dir.path().join("resumed");
    bin()
        .args([
            "train", "--epochs", "1", "--batch", "4", "--seed", "7", "--latest-only", "--data",
        ])
        .arg(&data)
        .arg("--out")
        .arg(&resumed)
        .status()
        .unwrap();
    let status = bin()
        .args([
            "train", "--resume", "--epochs", "3", "--batch", "4", "--seed", "7", "--latest-only",
            "--data",
        ])
        .arg(&data)
        .arg("--out")
        .arg(&resumed)
        .status()
        .unwrap();
    assert!(status.success());

    assert_eq!(
        std::fs::read(full.join("metrics.csv")).unwrap(),
        std::fs::read(resumed.join("metrics.csv")).unwrap(),
        "resumed metrics differ from the uninterrupted run"
    );
    assert_eq!(
        std::fs::read(full.join("latest.ckpt")).unwrap(),
        std::fs::read(resumed.join("latest.ckpt")).unwrap(),
        "resumed checkpoint differs from the uninterrupted run"
    );
}

#[test]
fn verify_geom_suite_passes_via_cli() {
    let output = bin().args(["verify", "geom"]).output().unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("PASS"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 4, 9);
    let conf = dir.path().join("run.conf");
    std::fs::write(
        &conf,
        format!("data = {}\nepochs = 0\n", data.display()),
    )
    .unwrap();
    let out = dir.path().join("out");
    // data and epochs come from the file; --out from the flag
    let status = bin()
        .args(["train", "--config"])
        .arg(&conf)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("latest.ckpt").exists());

    // unknown key in the config is a usage error
    std::fs::write(&conf, "velocity = 11\n").unwrap();
    let status = bin()
        .args(["train", "--config"])
        .arg(&conf)
        .arg("--data")
        .arg(&data)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn out_dir_env_var_is_honored_when_no_flag_given() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("from_env");
    let status = bin()
        .args(["synth", "--images", "2", "--seed", "1"])
        .env(reticount::cli::ENV_OUT_DIR, &env_out)
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(env_out.join("manifest.csv").exists());
}
