//! End-to-end tests of the `hanet` binary: exit codes, stdout contracts, and
//! the artifacts each subcommand leaves on disk.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hanet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hanet"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_code(out: &Output, want: i32) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "exit {:?}, stdout:\n{}\nstderr:\n{}",
        out.status.code(),
        stdout(out),
        stderr(out)
    );
}

/// Small corpus: `images` 32x32 frames with 2..=5 heads.
fn synth_corpus(dir: &Path, images: usize, seed: u64) -> PathBuf {
    let out = hanet(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--images",
        &images.to_string(),
        "--size",
        "32x32",
        "--heads",
        "2..5",
        "--seed",
        &seed.to_string(),
        "--patches-per-image",
        "1",
    ]);
    assert_code(&out, 0);
    dir.join("manifest.json")
}

/// Shared tiny-training flags: toy model, two steps, one-image batches.
fn tiny_train_flags<'a>(manifest: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train",
        "--train-manifest",
        manifest,
        "--out",
        out,
        "--backbone",
        "toy",
        "--scales",
        "1",
        "--iterations",
        "2",
        "--batch-size",
        "1",
        "--patch-size",
        "32",
        "--patches-per-image",
        "1",
        "--seed",
        "5",
    ]
}

#[test]
fn help_and_version_exit_zero() {
    let help = hanet(&["--help"]);
    assert_code(&help, 0);
    let text = stdout(&help);
    for sub in ["synth", "make-gt", "train", "eval", "predict", "ablate"] {
        assert!(text.contains(sub), "help lost subcommand {sub}:\n{text}");
    }
    assert_code(&hanet(&["--version"]), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_code(&hanet(&["bogus"]), 1);
    assert_code(&hanet(&["synth"]), 1); // missing required --out
    assert_code(&hanet(&["synth", "--out", "/tmp/x", "--size", "banana"]), 1);
    assert_code(&hanet(&["train", "--iterations", "-3"]), 1);
}

#[test]
fn validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // Frame too small for any patch grid.
    let out = hanet(&[
        "synth",
        "--out",
        dir.path().to_str().unwrap(),
        "--size",
        "4x4",
    ]);
    assert_code(&out, 2);

    // Unknown enum-ish string values are caught after parsing.
    assert_code(&hanet(&["ablate", "--suite", "nonsense"]), 2);
    let out = hanet(&["train", "--unit", "bogus"]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("steps | epochs"), "{}", stderr(&out));

    // Missing files are runtime errors, not panics.
    assert_code(&hanet(&["eval", "--checkpoint", "/nonexistent.hanc", "--manifest", "/nonexistent.json"]), 2);
    assert_code(&hanet(&["predict", "--checkpoint", "/nonexistent.hanc", "--image", "/nonexistent.png"]), 2);
}

#[test]
fn synth_writes_the_corpus_it_promises() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(dir.path(), 3, 11);
    assert!(manifest.is_file());
    for i in 0..3 {
        assert!(dir.path().join(format!("img_{i:03}.png")).is_file());
        assert!(dir.path().join(format!("img_{i:03}.json")).is_file());
    }
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(parsed["records"].as_array().unwrap().len(), 3);
    assert_eq!(parsed["policy"]["M"], 1);
}

#[test]
fn make_gt_renders_every_record() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(dir.path(), 3, 12);
    let gt = dir.path().join("gt");
    let out = hanet(&[
        "make-gt",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        gt.to_str().unwrap(),
        "--gt",
        "adaptive",
        "--downsample",
        "4",
    ]);
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("rendered 3/3 maps"), "{text}");
    for i in 0..3 {
        assert!(gt.join(format!("img_{i:03}.dmap")).is_file());
        assert!(gt.join(format!("img_{i:03}.pgm")).is_file());
    }
}

#[test]
fn make_gt_survives_a_broken_record_but_reports_failure() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(dir.path(), 3, 13);
    std::fs::remove_file(dir.path().join("img_001.png")).unwrap();
    let gt = dir.path().join("gt");
    let out = hanet(&[
        "make-gt",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        gt.to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(stdout(&out).contains("rendered 2/3 maps"), "{}", stdout(&out));
    assert!(stderr(&out).contains("img_001"), "{}", stderr(&out));
    // The intact records still produced their maps.
    assert!(gt.join("img_000.dmap").is_file());
    assert!(gt.join("img_002.dmap").is_file());
    assert!(!gt.join("img_001.dmap").exists());
}

#[test]
fn train_writes_config_checkpoint_trace_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = synth_corpus(&data, 3, 14);
    let run = dir.path().join("run");
    let mut args = tiny_train_flags(manifest.to_str().unwrap(), run.to_str().unwrap());
    let m = manifest.to_str().unwrap().to_string();
    args.push("--test-manifest");
    args.push(&m);
    let out = hanet(&args);
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("final loss at step 2"), "{text}");
    assert!(text.contains("MAE:"), "{text}");
    assert!(text.contains("MSE:"), "{text}");

    for name in ["config.json", "checkpoint.hanc", "loss_trace.csv", "eval.csv", "metrics.json"] {
        assert!(run.join(name).is_file(), "missing artifact {name}");
    }

    // The config echo is itself a loadable config (flags round-trip).
    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["iterations"], 2);
    assert_eq!(echoed["seed"], 5);

    // Two steps, two trace rows.
    let trace = std::fs::read_to_string(run.join("loss_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3, "header + 2 rows:\n{trace}");

    // metrics.json agrees with the printed MAE.
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["mae"].as_f64().unwrap().is_finite());
    assert_eq!(metrics["images"].as_u64().unwrap(), 3);
}

#[test]
fn train_accepts_a_config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = synth_corpus(&data, 2, 15);
    let run1 = dir.path().join("run1");
    let out = hanet(&tiny_train_flags(manifest.to_str().unwrap(), run1.to_str().unwrap()));
    assert_code(&out, 0);

    // Reuse the echoed config, overriding only the output directory and step
    // count; the override must win over the file.
    let run2 = dir.path().join("run2");
    let out = hanet(&[
        "train",
        "--config",
        run1.join("config.json").to_str().unwrap(),
        "--out",
        run2.to_str().unwrap(),
        "--iterations",
        "1",
    ]);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("final loss at step 1"), "{}", stdout(&out));
    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run2.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["iterations"], 1);
}

#[test]
fn exploding_training_aborts_with_exit_three_and_a_rescue_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = synth_corpus(&data, 2, 16);
    let run = dir.path().join("run");
    let out = hanet(&[
        "train",
        "--train-manifest",
        manifest.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--backbone",
        "toy",
        "--scales",
        "1",
        "--iterations",
        "50",
        "--batch-size",
        "1",
        "--patch-size",
        "32",
        "--patches-per-image",
        "1",
        "--seed",
        "5",
        "--lr",
        "1e15",
    ]);
    assert_code(&out, 3);
    assert!(stderr(&out).contains("non-finite"), "{}", stderr(&out));
    assert!(run.join("checkpoint_abort.hanc").is_file());
}

#[test]
fn eval_reports_metrics_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = synth_corpus(&data, 3, 17);
    let run = dir.path().join("run");
    let out = hanet(&tiny_train_flags(manifest.to_str().unwrap(), run.to_str().unwrap()));
    assert_code(&out, 0);

    let reports = dir.path().join("reports");
    let out = hanet(&[
        "eval",
        "--checkpoint",
        run.join("checkpoint.hanc").to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        reports.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("images: 3"), "{text}");
    assert!(text.contains("MAE:"), "{text}");
    assert!(reports.join("eval.csv").is_file());
    assert!(reports.join("metrics.json").is_file());

    // eval.csv has one row per image plus a header.
    let csv = std::fs::read_to_string(reports.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");
}

#[test]
fn predict_prints_a_count_and_writes_the_density_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = synth_corpus(&data, 2, 18);
    let run = dir.path().join("run");
    let out = hanet(&tiny_train_flags(manifest.to_str().unwrap(), run.to_str().unwrap()));
    assert_code(&out, 0);

    let dmap = dir.path().join("pred.dmap");
    let pgm = dir.path().join("pred.pgm");
    let out = hanet(&[
        "predict",
        "--checkpoint",
        run.join("checkpoint.hanc").to_str().unwrap(),
        "--image",
        data.join("img_000.png").to_str().unwrap(),
        "--out-dmap",
        dmap.to_str().unwrap(),
        "--out-pgm",
        pgm.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let text = stdout(&out);
    let count_line = text.lines().find(|l| l.starts_with("count: ")).unwrap_or_else(|| {
        panic!("no count line in:\n{text}")
    });
    let value: f64 = count_line.trim_start_matches("count: ").parse().unwrap();
    assert!(value.is_finite());
    assert!(pgm.is_file());

    // 32x32 input at stride 8 gives a 4x4 grid, and the written grid sums to
    // the printed count.
    let grid = hanet_core::groundtruth::read_dmap(&dmap).unwrap();
    assert_eq!((grid.h, grid.w), (4, 4));
    assert!((grid.total() - value).abs() < 5e-4, "grid {} vs printed {value}", grid.total());
}

#[test]
fn ablate_writes_the_suite_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = synth_corpus(&data, 2, 19);
    let run = dir.path().join("ablate");
    let out = hanet(&[
        "ablate",
        "--suite",
        "components",
        "--train-manifest",
        manifest.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--backbone",
        "toy",
        "--iterations",
        "1",
        "--batch-size",
        "1",
        "--patch-size",
        "32",
        "--patches-per-image",
        "1",
        "--seed",
        "6",
    ]);
    assert_code(&out, 0);
    let table = run.join("ablation_components.csv");
    assert!(table.is_file());
    let text = std::fs::read_to_string(&table).unwrap();
    assert_eq!(text.lines().count(), 7, "header + 6 rows:\n{text}");
    assert!(text.starts_with("config,mae,mse,wall_seconds,status"), "{text}");
}
