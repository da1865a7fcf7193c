use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cinesr::data::{scan_dataset, synth_phantom_clip, write_clip_dicom, write_clip_pgm, DatasetFormat, PhantomConfig};
use cinesr::harness::{self, ExperimentConfig, HarnessError, InferenceOptions, TrainOptions};
use cinesr::spatial::DegradationConfig;

#[derive(Parser)]
#[command(name = "cinesr", version, about = "Cine MRI temporal + spatial super-resolution with a residual-shifting latent diffusion model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file, or a built-in profile name (`toy`, `fullscale`).
    #[arg(short, long, default_value = "toy")]
    config: String,
    /// Override the run directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Degradation {
    /// Whatever the config says.
    Config,
    Realistic,
    Bicubic,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiskFormat {
    Pgm,
    Dicom,
}

#[derive(Subcommand)]
enum Command {
    /// Index a dataset directory and print the series found.
    Scan {
        root: PathBuf,
        #[arg(long, default_value = "dicom")]
        format: DatasetFormat,
        /// Append the scan log to this file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Write synthetic beating phantoms as a dataset tree.
    SynthData {
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        patients: usize,
        #[arg(long, default_value_t = 30)]
        frames: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, value_enum, default_value = "pgm")]
        format: DiskFormat,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Stage 1 only: pre-train (or verify) the autoencoder.
    TrainAutoencoder {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Both stages; resumes from the latest checkpoint in the run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Stop after this many iterations in this invocation.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Progress line every N iterations (0 = quiet).
        #[arg(long, default_value_t = 50)]
        progress: usize,
    },
    /// Score the baseline and the trained model on the held-out triplets.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "config")]
        degradation: Degradation,
    },
    /// Super-resolve one triplet of an evaluation clip.
    Infer {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Index into the evaluation clips.
        #[arg(long, default_value_t = 0)]
        clip: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        window_seed: u64,
        #[arg(long)]
        dump_trajectory: bool,
        /// Also write the optical-flow interpolated frames of the window.
        #[arg(long)]
        dump_interpolated: bool,
    },
    /// Bicubic baseline only; needs no trained model.
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "config")]
        degradation: Degradation,
    },
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = match ExperimentConfig::profile(&args.config) {
        Some(c) if !Path::new(&args.config).exists() => c,
        _ => ExperimentConfig::load(Path::new(&args.config))?,
    };
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn with_degradation(mut cfg: ExperimentConfig, d: Degradation) -> (ExperimentConfig, &'static str) {
    let scale = cfg.degradation.scale;
    match d {
        Degradation::Config => {}
        Degradation::Realistic => cfg.degradation = DegradationConfig::realistic(scale),
        Degradation::Bicubic => cfg.degradation = DegradationConfig::bicubic_only(scale),
    }
    let tag = harness::degradation_tag(&cfg);
    (cfg, tag)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Scan { root, format, log } => {
            let index = scan_dataset(&root, format)?;
            for e in &index.entries {
                println!("{}\t{}\t{} frames", e.patient_id, e.slice_id, e.frame_count);
            }
            println!("{} series, {} patients, {} log notes", index.len(), index.patient_ids().len(), index.log.len());
            eprint!("{}", index.log_text());
            if let Some(p) = log {
                index.append_log(&p).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::SynthData { out, patients, frames, size, format, seed } => {
            let mut written = 0;
            for i in 0..patients as u64 {
                let pc = PhantomConfig { size, texture_seed: PhantomConfig::default().texture_seed.wrapping_add(i), ..PhantomConfig::default() };
                let clip = synth_phantom_clip(&pc, frames, seed.wrapping_add(i))?;
                written += match format {
                    DiskFormat::Pgm => write_clip_pgm(&out, &clip),
                    DiskFormat::Dicom => write_clip_dicom(&out, &clip),
                }
                .with_context(|| format!("writing under {}", out.display()))?
                .len();
            }
            println!("wrote {written} frames for {patients} patients to {}", out.display());
        }
        Command::TrainAutoencoder { cfg } => {
            let cfg = load_config(&cfg)?;
            cfg.validate()?;
            let run = cfg.run_dir();
            run.create()?;
            let clips = harness::load_clips(&cfg)?;
            let (_, report, psnr) = harness::prepare_autoencoder(&cfg, &run, &clips, true)?;
            match report {
                Some(r) => println!("trained autoencoder: {:.2} dB after {} steps, {} codes in use", r.final_psnr, r.steps_run, r.codes_in_use),
                None => println!("existing autoencoder: {psnr:.2} dB"),
            }
            println!("{}", run.autoencoder_checkpoint().display());
        }
        Command::Train { cfg, stop_after, progress } => {
            let cfg = load_config(&cfg)?;
            let out = harness::run_training(&cfg, &TrainOptions { stop_after, progress_every: progress })?;
            if let Some(k) = out.resumed_from {
                println!("resumed from iteration {k}");
            }
            println!("autoencoder {:.2} dB; denoiser at iteration {}", out.autoencoder_psnr, out.final_iteration);
            println!("checkpoint {}\nlog {}", out.checkpoint.display(), out.log.display());
        }
        Command::Evaluate { cfg, checkpoint, degradation } => {
            let (cfg, tag) = with_degradation(load_config(&cfg)?, degradation);
            let report = harness::run_evaluation(&cfg, checkpoint.as_deref())?;
            println!("degradation: {tag}\n{}", report.to_table());
        }
        Command::Infer { cfg, checkpoint, clip, seed, window_seed, dump_trajectory, dump_interpolated } => {
            let cfg = load_config(&cfg)?;
            let clips = harness::load_clips(&cfg)?;
            let Some(c) = clips.eval.get(clip) else {
                bail!(HarnessError::DataUnavailable(format!("evaluation set has {} clips, asked for index {clip}", clips.eval.len())));
            };
            let opts = InferenceOptions { seed, window_seed, dump_trajectory, dump_interpolated, checkpoint };
            let out = harness::run_inference(&cfg, c, &opts)?;
            for p in out.frames.iter().chain(&out.trajectory).chain(&out.interpolated) {
                println!("{}", p.display());
            }
        }
        Command::Baseline { cfg, degradation } => {
            let (cfg, tag) = with_degradation(load_config(&cfg)?, degradation);
            let report = harness::run_baseline(&cfg)?;
            println!("degradation: {tag}\n{}", report.to_table());
        }
    }
    Ok(())
}

fn category(e: &anyhow::Error) -> &'static str {
    if let Some(h) = e.downcast_ref::<HarnessError>() {
        return h.category();
    }
    if e.downcast_ref::<cinesr::data::IngestError>().is_some() {
        return "data";
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return "io";
    }
    "error"
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", category(&e));
            ExitCode::FAILURE
        }
    }
}
