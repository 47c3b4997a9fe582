use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gsdyn::dataset::Manifest;
use gsdyn::metrics::{read_metrics_csv, write_labels};
use gsdyn::selftest::tiny_config;

fn gsdyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsdyn")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate_small(dir: &Path, scene: &str) {
    let out = gsdyn(&["generate", "--scene", scene, "--frames", "6", "--resolution", "24x24", "--out", p(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gsdyn(&["train", "--data", p(dir.path()), "--out", p(dir.path()), "--config", "missing.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.cfg"));
}

#[test]
fn unknown_flags_and_scenes_are_usage_errors() {
    assert_eq!(gsdyn(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(gsdyn(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(gsdyn(&["generate", "--scene", "nope", "--out", "x"]).status.code(), Some(2));
    assert_eq!(gsdyn(&["generate", "--resolution", "64", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let out = gsdyn(&["selftest"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn perfect_labels_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate_small(&data, "two_materials");
    let manifest = Manifest::read(&data).unwrap();
    let labels: Vec<usize> = manifest.labels.iter().map(|&l| l as usize).collect();
    let file = dir.path().join("labels.txt");
    write_labels(&file, &labels).unwrap();
    let out_dir = dir.path().join("eval");
    let out = gsdyn(&["evaluate", "--data", p(&data), "--labels", p(&file), "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_metrics_csv(&out_dir.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].miou, Some(1.0));
    assert_eq!(rows[0].f1, Some(1.0));
}

#[test]
fn generate_honors_frames_and_resolution() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "falling_elastic_cube");
    let m = Manifest::read(dir.path()).unwrap();
    assert_eq!(m.train_frames + m.extrapolate_frames, 6);
    assert_eq!((m.recipe.width, m.recipe.height), (24, 24));
    let png = fs::read(dir.path().join(m.frame_path(0, 5))).unwrap();
    assert_eq!(&png[1..4], b"PNG");
}

#[test]
fn train_extrapolate_segment_chain() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate_small(&data, "two_materials");
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, tiny_config().to_toml()).unwrap();
    let run = dir.path().join("run");
    let out = gsdyn(&["train", "--data", p(&data), "--out", p(&run), "--config", p(&cfg), "--seed", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint.bin", "loss.csv", "config.toml"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let ckpt = run.join("checkpoint.bin");
    let ex = dir.path().join("ex");
    let out = gsdyn(&["extrapolate", "--data", p(&data), "--checkpoint", p(&ckpt), "--out", p(&ex)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_metrics_csv(&ex.join("metrics.csv")).unwrap();
    assert_eq!(rows[0].task, "extrapolation");
    assert!(rows[0].psnr.unwrap() > 10.0);
    let seg = dir.path().join("seg");
    let out = gsdyn(&["segment", "--data", p(&data), "--checkpoint", p(&ckpt), "--out", p(&seg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(seg.join("labels.txt").is_file());
    assert!(seg.join("labels_cam_00.png").is_file());
    let out = gsdyn(&["segment", "--data", p(&data), "--checkpoint", p(&ckpt), "--out", p(&seg), "--clusters", "0"]);
    assert_eq!(out.status.code(), Some(2));
}
