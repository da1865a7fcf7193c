//! Harness behaviour end to end on miniature configurations.

use std::path::Path;
use std::process::Command;

use cinesr::autoencoder::{AutoencoderConfig, VqAutoencoder};
use cinesr::diffusion::{UNet, UNetConfig};
use cinesr::harness::{
    build_eval_samples, evaluate_samples, load_clips, load_denoiser, read_log, run_baseline, run_inference, run_training, ExperimentConfig,
    HarnessError, InferenceOptions, ModelUnderTest, TrainOptions, BASELINE_ROW, MODEL_ROW,
};

fn miniature(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::toy();
    cfg.output_dir = dir.to_path_buf();
    cfg.data.frame_size = 32;
    cfg.data.phantom.train_clips = 3;
    cfg.data.phantom.eval_clips = 2;
    cfg.data.phantom.frames_per_clip = 12;
    cfg.autoencoder.model = AutoencoderConfig { base_channels: 6, mid_channels: 8, n_codes: 64, ..AutoencoderConfig::default() };
    cfg.autoencoder.train.steps = 150;
    cfg.autoencoder.train.warmup_steps = 50;
    cfg.autoencoder.train.eval_every = 50;
    cfg.autoencoder.min_psnr = 0.0;
    cfg.diffusion.model = UNetConfig { latent_channels: 9, base_channels: 4, time_dim: 8, seed: 0 };
    cfg.diffusion.train.iterations = 8;
    cfg.diffusion.train.batch_size = 2;
    cfg.diffusion.pool_size = 16;
    cfg.diffusion.checkpoint_every = 4;
    cfg.evaluation.triplets = 6;
    cfg
}

#[test]
fn oracle_latents_beat_the_bicubic_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = miniature(dir.path());
    run_training(&cfg, &TrainOptions::default()).unwrap();
    let ae = VqAutoencoder::load(&cfg.run_dir().autoencoder_checkpoint()).unwrap();
    let clips = load_clips(&cfg).unwrap();
    let samples = build_eval_samples(&cfg, &clips.eval).unwrap();
    let r = evaluate_samples(&cfg, Some(&ae), Some(ModelUnderTest::OracleLatents), &samples, None).unwrap();
    let (b, m) = (r.row(BASELINE_ROW).unwrap(), r.row(MODEL_ROW).unwrap());
    assert!(m.psnr_db >= b.psnr_db, "oracle {:.2} dB vs baseline {:.2} dB", m.psnr_db, b.psnr_db);
    assert!(m.latent_l1.unwrap() < b.latent_l1.unwrap());
}

#[test]
fn checkpoint_round_trip_preserves_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = miniature(dir.path());
    let out = run_training(&cfg, &TrainOptions::default()).unwrap();
    let ae = VqAutoencoder::load(&cfg.run_dir().autoencoder_checkpoint()).unwrap();
    let (net, ck) = load_denoiser(&out.checkpoint, &ae).unwrap();
    assert_eq!(ck.header_value("iteration"), Some("8"));
    let copy = dir.path().join("copy.safetensors");
    net.save(&copy).unwrap();
    let again = UNet::load(&copy).unwrap();
    let clips = load_clips(&cfg).unwrap();
    let samples = build_eval_samples(&cfg, &clips.eval).unwrap();
    let a = evaluate_samples(&cfg, Some(&ae), Some(ModelUnderTest::Denoiser(&net)), &samples, None).unwrap();
    let b = evaluate_samples(&cfg, Some(&ae), Some(ModelUnderTest::Denoiser(&again)), &samples, None).unwrap();
    assert_eq!(a, b);
    // Periodic snapshots exist alongside the latest one.
    assert!(cfg.run_dir().denoiser_at(4).is_file());
}

#[test]
fn a_denoiser_is_refused_with_a_different_autoencoder() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = miniature(dir.path());
    let out = run_training(&cfg, &TrainOptions::default()).unwrap();
    let other = VqAutoencoder::new(AutoencoderConfig { seed: 99, ..cfg.autoencoder.model.clone() }).unwrap();
    assert!(matches!(load_denoiser(&out.checkpoint, &other), Err(HarnessError::CheckpointMismatch(_))));
}

#[test]
fn baseline_needs_no_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = miniature(dir.path());
    let r = run_baseline(&cfg).unwrap();
    assert_eq!(r.rows.len(), 1);
    assert_eq!(r.rows[0].n_images, 18);
    assert!(r.rows[0].latent_l1.is_none() && r.rows[0].lpips.is_none());
    let text = std::fs::read_to_string(cfg.run_dir().reports().join("baseline_realistic.txt")).unwrap();
    assert!(text.contains("Baseline.lpips = absent"), "{text}");
}

#[test]
fn inference_is_deterministic_and_dumps_five_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = miniature(dir.path());
    run_training(&cfg, &TrainOptions::default()).unwrap();
    let clips = load_clips(&cfg).unwrap();
    let opts = InferenceOptions { seed: 3, window_seed: 8, dump_trajectory: true, ..InferenceOptions::default() };
    let a = run_inference(&cfg, &clips.eval[0], &opts).unwrap();
    let bytes: Vec<Vec<u8>> = a.frames.iter().chain(&a.trajectory).map(|p| std::fs::read(p).unwrap()).collect();
    let b = run_inference(&cfg, &clips.eval[0], &opts).unwrap();
    let again: Vec<Vec<u8>> = b.frames.iter().chain(&b.trajectory).map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(a.sr, b.sr);
    assert_eq!(bytes, again);
    assert_eq!(a.trajectory.len(), 5);
    assert_eq!(a.sr.dim(), (3, 32, 32));
    assert!(a.sr.iter().all(|v| v.is_finite()));
    let (_, grid) = cinesr::data::pgm::read(&a.trajectory[0]).map(|(img, max)| (max, img)).unwrap();
    assert_eq!(grid.dim(), (32, 96));
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cinesr")).args(args).output().unwrap()
}

#[test]
fn cli_train_resumes_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = miniature(Path::new("run"));
    cfg.diffusion.train.iterations = 6;
    cfg.diffusion.checkpoint_every = 2;
    let path = dir.path().join("mini.toml");
    std::fs::write(&path, cfg.to_toml_string()).unwrap();
    let p = path.to_str().unwrap();
    let first = cli(&["train", "-c", p, "--stop-after", "3", "--progress", "0"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = cli(&["train", "-c", p, "--progress", "0"]);
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    assert!(String::from_utf8_lossy(&second.stdout).contains("resumed from iteration 3"));
    // Relative paths in the file resolve against the file's directory.
    let log = read_log(&dir.path().join("run/logs/train.jsonl")).unwrap();
    assert_eq!(log.iter().map(|r| r.iteration).collect::<Vec<_>>(), (1..=6).collect::<Vec<_>>());
    let eval = cli(&["evaluate", "-c", p]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let table = String::from_utf8_lossy(&eval.stdout).to_string();
    assert!(table.contains("Baseline") && table.contains("LDM"), "{table}");
}

#[test]
fn cli_failures_exit_nonzero_with_a_category() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing-here");
    let out = cli(&["scan", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[data]:"));
    let run = dir.path().join("empty-run");
    let out = cli(&["evaluate", "--output-dir", run.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[data]:"), "{}", String::from_utf8_lossy(&out.stderr));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[diffusion.train]\nbatch_size = 0\n").unwrap();
    let out = cli(&["train", "-c", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]:"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cli_synth_data_then_scan() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("dcm");
    let r = root.to_str().unwrap();
    assert!(cli(&["synth-data", r, "--patients", "2", "--frames", "10", "--size", "32", "--format", "dicom"]).status.success());
    let out = cli(&["scan", r]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("2 series, 2 patients"));
}
