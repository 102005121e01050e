use std::path::Path;
use std::process::{Command, Output};

fn semstereo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semstereo")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    format!(
        r#"[model]
base_channels = 4
disp_features = 3
sem_features = 4
num_res_blocks = 1
d_min = -8
d_max = 8

[optimizer]
steps = 3
batch_size = 2

[data]
synth_count = 2
tile = 32

[data.synth]
height = 32
width = 32
d_min = -8
d_max = 8
num_objects = 2

[eval]
tile = 32

[output]
checkpoint_dir = "{}"
report_path = "{}"
"#,
        dir.join("run").display(),
        dir.join("run/report.txt").display()
    )
}

#[test]
fn end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, tiny_config(dir.path())).unwrap();
    let cfg = cfg_path.to_str().unwrap();

    let data = dir.path().join("scenes");
    let out = semstereo(&["synth", "--out", data.to_str().unwrap(), "--count", "2", "--seed", "7", "--config", cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("synth000007_LEFT_RGB.tif").exists());
    assert!(data.join("manifest.txt").exists());

    let out = semstereo(&["train", "--config", cfg, "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = dir.path().join("run/final.ckpt");
    assert!(ckpt.exists());
    let curve = std::fs::read_to_string(dir.path().join("run/loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);

    let report = dir.path().join("report.txt");
    let out = semstereo(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("D1-Error: "));
    assert!(text.contains("mIoU-3: "));

    let pred = dir.path().join("pred");
    let out = semstereo(&[
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--left",
        data.join("synth000007_LEFT_RGB.tif").to_str().unwrap(),
        "--right",
        data.join("synth000007_RIGHT_RGB.tif").to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["disparity.tif", "classes.tif", "disparity.png", "classes.png"] {
        assert!(pred.join(f).exists(), "{f} missing");
    }
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(semstereo(&[]).status.code(), Some(1));
    assert_eq!(semstereo(&["train"]).status.code(), Some(1));
    assert_eq!(semstereo(&["frobnicate"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nno_such_key = 1\n").unwrap();
    let out = semstereo(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let out = semstereo(&[
        "predict",
        "--checkpoint",
        missing.to_str().unwrap(),
        "--left",
        "l.png",
        "--right",
        "r.png",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let out = semstereo(&["eval", "--checkpoint", junk.to_str().unwrap(), "--data", ".", "--report", "r.txt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_succeeds() {
    let out = semstereo(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ablate"));
}
