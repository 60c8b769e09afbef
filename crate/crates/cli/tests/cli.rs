use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use image::{Rgb, RgbImage};

const CONFIG: &str = r#"
output_dir = "run"
[dataset]
subset = "HD"
root = "hd"
[seeds]
partition = 5
splits = 6
training = 7
[train]
batch_size = 4
validate_every = 2
[train.schedule]
warmup_epochs = 1
lr_start = 1e-4
lr_base = 2e-3
steps = [[2, 1e-3], [3, 5e-4]]
total_epochs = 4
"#;

fn write_fixture(dir: &Path) {
    for id in 0..8u8 {
        for j in 0..3u8 {
            let img = RgbImage::from_fn(32, 32, |x, y| {
                let cell = ((x / 8) + 4 * (y / 8)) as u8;
                Rgb([cell.wrapping_mul(37).wrapping_add(id * 29), id.wrapping_mul(53) ^ cell, j * 5 + (x as u8)])
            });
            let path = dir.join("hd").join(format!("{:04}", id + 1)).join(format!("{j}.png"));
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            img.save(path).unwrap();
        }
    }
    fs::write(dir.join("exp.toml"), CONFIG).unwrap();
}

fn handid(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handid"))
        .args(args)
        .arg("--config")
        .arg(dir.join("exp.toml"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn full_run_through_every_command() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let out = handid(dir.path(), &["prepare"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("HD"));

    let out = handid(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("run/checkpoints/last.safetensors").exists());

    let out = handid(dir.path(), &["evaluate"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout(&out);
    assert!(report.starts_with("# config-hash "));
    assert!(report.lines().any(|l| l.starts_with("mean")));

    let out = handid(dir.path(), &["visualize", "--n-queries", "3", "--top-n", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("run/grids/split_00.png").exists());
}

#[test]
fn changed_config_needs_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    assert_eq!(handid(dir.path(), &["prepare"]).status.code(), Some(0));
    let out = handid(dir.path(), &["prepare", "--split-seed", "99"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--overwrite"));
    assert_eq!(handid(dir.path(), &["prepare", "--split-seed", "99", "--overwrite"]).status.code(), Some(0));
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    fs::remove_dir_all(dir.path().join("hd")).unwrap();
    let out = handid(dir.path(), &["prepare"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hd"));

    let out = handid(dir.path(), &["prepare", "--subset", "X-y"]);
    assert_eq!(out.status.code(), Some(2));
    let out = handid(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = handid::config::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(cfg.output_dir.is_absolute(), "{}", path.display());
            n += 1;
        }
    }
    assert_eq!(n, 5);
}
