//! Every example runs to completion with its default (small) arguments.
//! `cargo test` builds the examples before running this file.

use std::path::PathBuf;
use std::process::Command;

fn example(name: &str) -> PathBuf {
    // target/<profile>/deps/examples-<hash> → target/<profile>/examples/<name>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    profile_dir.join("examples").join(format!("{name}{}", std::env::consts::EXE_SUFFIX))
}

fn run(name: &str, args: &[&str]) -> String {
    let path = example(name);
    assert!(path.is_file(), "{} not built", path.display());
    let out = Command::new(&path).args(args).output().unwrap();
    assert!(out.status.success(), "{name} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn ingest_phantom() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("ingest_phantom", &[dir.path().to_str().unwrap()]);
    assert!(out.contains("pgm: ") && out.contains("dicom: ") && out.contains("series from"), "{out}");
}

#[test]
fn optical_flow() {
    assert!(run("optical_flow", &["2", "1"]).contains("interior mean flow"));
}

#[test]
fn frame_interpolation() {
    assert!(run("frame_interpolation", &[]).contains("tau = "));
}

#[test]
fn degradation() {
    let out = run("degradation", &[]);
    assert!(out.matches("bicubic-up PSNR").count() >= 2, "{out}");
}

#[test]
fn image_metrics() {
    assert!(run("image_metrics", &[]).contains("backbone layers"));
}

#[test]
fn vq_autoencoder() {
    assert!(run("vq_autoencoder", &["30"]).contains("codes in use"));
}

#[test]
fn shifting_schedule() {
    assert!(run("shifting_schedule", &["5"]).matches("  t = ").count() >= 5);
}

#[test]
fn reverse_sampler() {
    let out = run("reverse_sampler", &[]);
    assert!(out.contains("denoiser calls: 15"), "{out}");
    assert_eq!(out.matches("progress").count(), 5);
}

#[test]
fn train_denoiser() {
    assert!(run("train_denoiser", &["10"]).contains("weights preserved: true"));
}

#[test]
fn toy_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("toy_pipeline", &[dir.path().to_str().unwrap()]);
    assert!(out.contains("resumed from Some(") && out.contains("trajectory grids"), "{out}");
}
