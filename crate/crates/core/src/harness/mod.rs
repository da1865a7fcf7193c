//! End-to-end orchestration: data splits, autoencoder pre-training, denoiser
//! training with checkpoints and resumption, evaluation against the bicubic
//! baseline, and inference with trajectory dumps.
//!
//! A run directory holds `config.toml`, `checkpoints/`, `logs/` (JSON lines),
//! `reports/` and `dumps/` (PGM images).

mod config;
mod dataset;
mod eval;
mod sample;
mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{AutoencoderStage, DataConfig, DataSource, DiffusionStage, EvaluationConfig, ExperimentConfig, PhantomSet, WindowConfig};
pub use dataset::{load_clips, ClipSplit};
pub use eval::{
    build_eval_samples, degradation_tag, evaluate_samples, run_baseline, run_evaluation, run_inference, write_report, InferenceOptions, InferenceOutcome,
    ModelUnderTest, BASELINE_ROW, MODEL_ROW,
};
pub use sample::{
    assemble_training_sample, decode_stacks, encode_samples, encode_stacks, regenerate_sample, sample_seed, upscale_triplet, SampleMeta,
    TrainingSample,
};
pub use train::{build_latent_pool, load_denoiser, prepare_autoencoder, read_log, run_training, TrainOptions, TrainOutcome};

use crate::autoencoder::AutoencoderError;
use crate::data::IngestError;
use crate::diffusion::DiffusionError;
use crate::metrics::MetricError;
use crate::nn::CheckpointError;
use crate::spatial::SpatialError;
use crate::temporal::TemporalError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data unavailable: {0}")]
    DataUnavailable(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("refusing to resume: checkpoint was trained with config {found}, current config is {expected}")]
    ResumeMismatch { found: String, expected: String },
    #[error("autoencoder reached only {psnr:.2} dB, below the required {min:.2} dB")]
    AutoencoderBelowThreshold { psnr: f64, min: f64 },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Autoencoder(#[from] AutoencoderError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    /// Short category for the CLI's error line.
    pub fn category(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::DataUnavailable(_) | Self::Ingest(_) => "data",
            Self::CheckpointMismatch(_) | Self::ResumeMismatch { .. } | Self::Checkpoint(_) => "checkpoint",
            Self::AutoencoderBelowThreshold { .. } | Self::Autoencoder(_) => "autoencoder",
            Self::EmptyEvalSet | Self::Metric(_) => "evaluation",
            Self::Temporal(_) | Self::Spatial(_) => "pipeline",
            Self::Diffusion(_) => "diffusion",
            Self::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io { path: path.to_path_buf(), source }
    }
}

/// Layout of a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Create the directory tree.
    pub fn create(&self) -> Result<(), HarnessError> {
        for d in [self.checkpoints(), self.logs(), self.reports(), self.dumps()] {
            std::fs::create_dir_all(&d).map_err(HarnessError::io(&d))?;
        }
        Ok(())
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn dumps(&self) -> PathBuf {
        self.root.join("dumps")
    }

    pub fn autoencoder_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("autoencoder.safetensors")
    }

    pub fn denoiser_latest(&self) -> PathBuf {
        self.checkpoints().join("denoiser-latest.safetensors")
    }

    pub fn denoiser_at(&self, iteration: usize) -> PathBuf {
        self.checkpoints().join(format!("denoiser-{iteration:06}.safetensors"))
    }

    pub fn optimizer_latest(&self) -> PathBuf {
        self.checkpoints().join("optimizer-latest.safetensors")
    }

    pub fn train_log(&self) -> PathBuf {
        self.logs().join("train.jsonl")
    }

    pub fn autoencoder_log(&self) -> PathBuf {
        self.logs().join("autoencoder.jsonl")
    }
}

impl ExperimentConfig {
    pub fn run_dir(&self) -> RunDir {
        RunDir::new(&self.output_dir)
    }
}
