//! The whole pipeline on synthetic phantoms: autoencoder pre-training,
//! denoiser training with checkpoints, interruption and resume, evaluation
//! against the bicubic baseline, and inference with a trajectory dump.
//!
//! Defaults are cut down to finish in a minute or two; `--full` runs the
//! shipped toy profile unchanged.
//!
//! cargo run --release --example toy_pipeline -- [out_dir] [--full]

use cinesr::harness::{run_evaluation, run_inference, run_training, ExperimentConfig, InferenceOptions, TrainOptions, BASELINE_ROW, MODEL_ROW};
use cinesr::harness::load_clips;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.iter().any(|a| a == "--full");
    let out = args.iter().find(|a| !a.starts_with("--")).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cinesr-toy"));
    let mut cfg = ExperimentConfig::toy();
    cfg.output_dir = out.clone();
    if !full {
        cfg.data.frame_size = 32;
        cfg.data.phantom.train_clips = 4;
        cfg.data.phantom.eval_clips = 2;
        cfg.data.phantom.frames_per_clip = 16;
        cfg.autoencoder.train.steps = 120;
        cfg.autoencoder.train.warmup_steps = 40;
        cfg.autoencoder.train.eval_every = 40;
        cfg.autoencoder.min_psnr = 20.0;
        cfg.diffusion.model.base_channels = 8;
        cfg.diffusion.model.time_dim = 16;
        cfg.diffusion.train.iterations = 60;
        cfg.diffusion.train.batch_size = 4;
        cfg.diffusion.pool_size = 64;
        cfg.diffusion.checkpoint_every = 20;
        cfg.evaluation.triplets = 8;
    }
    let _ = std::fs::remove_dir_all(&out);

    let half = cfg.diffusion.train.iterations / 2;
    let first = run_training(&cfg, &TrainOptions { stop_after: Some(half), progress_every: 0 })?;
    println!("autoencoder {:.2} dB; interrupted at iteration {}", first.autoencoder_psnr, first.final_iteration);
    let done = run_training(&cfg, &TrainOptions { stop_after: None, progress_every: (half / 2).max(1) })?;
    println!("resumed from {:?}, finished at {}", done.resumed_from, done.final_iteration);

    let report = run_evaluation(&cfg, None)?;
    print!("{}", report.to_table());
    if let (Some(b), Some(m)) = (report.row(BASELINE_ROW), report.row(MODEL_ROW)) {
        println!("PSNR gain over bicubic: {:+.2} dB", m.psnr_db - b.psnr_db);
    }

    let clips = load_clips(&cfg)?;
    let inf = run_inference(&cfg, &clips.eval[0], &InferenceOptions { dump_trajectory: true, ..InferenceOptions::default() })?;
    println!("wrote {} frames and {} trajectory grids to {}", inf.frames.len(), inf.trajectory.len(), inf.dir.display());
    Ok(())
}
