//! Experiment configuration, stored as TOML. Two profiles ship in
//! `configs/`: `toy` and `fullscale`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::autoencoder::{AeTrainConfig, AutoencoderConfig};
use crate::data::{DatasetFormat, PhantomConfig};
use crate::diffusion::{DiffusionTrainConfig, ScheduleConfig, UNetConfig};
use crate::spatial::DegradationConfig;
use crate::temporal::FlowParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Synthetic clips generated on the fly.
    Phantom,
    Dicom,
    PgmTree,
}

impl DataSource {
    pub fn format(self) -> Option<DatasetFormat> {
        match self {
            Self::Phantom => None,
            Self::Dicom => Some(DatasetFormat::Dicom),
            Self::PgmTree => Some(DatasetFormat::PgmTree),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSet {
    pub train_clips: usize,
    pub eval_clips: usize,
    pub frames_per_clip: usize,
    /// `size` is overridden by `data.frame_size`; `texture_seed` is offset per clip.
    pub phantom: PhantomConfig,
}

impl Default for PhantomSet {
    fn default() -> Self {
        Self { train_clips: 24, eval_clips: 8, frames_per_clip: 30, phantom: PhantomConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Dataset root for `dicom` and `pgm_tree`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// Frames are stretched to `frame_size × frame_size`.
    pub frame_size: usize,
    /// Patients held out for evaluation. Empty means the last `eval_fraction`
    /// of patients in sorted order.
    pub eval_patients: Vec<String>,
    pub eval_fraction: f64,
    pub phantom: PhantomSet,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { source: DataSource::Phantom, root: None, frame_size: 256, eval_patients: Vec::new(), eval_fraction: 0.2, phantom: PhantomSet::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    /// Temporal gap between kept frames.
    pub k: usize,
    pub flow: FlowParams,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { k: 8, flow: FlowParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderStage {
    pub model: AutoencoderConfig,
    pub train: AeTrainConfig,
    /// Train one when no checkpoint is found.
    pub pretrain: bool,
    /// Use this checkpoint instead of `checkpoints/autoencoder.safetensors`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Pre-training fails below this validation PSNR.
    pub min_psnr: f64,
}

impl Default for AutoencoderStage {
    fn default() -> Self {
        Self { model: AutoencoderConfig::default(), train: AeTrainConfig::default(), pretrain: true, checkpoint: None, min_psnr: 25.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionStage {
    pub schedule: ScheduleConfig,
    pub model: UNetConfig,
    pub train: DiffusionTrainConfig,
    /// Training samples assembled and cached as latents.
    pub pool_size: usize,
    /// Rebuild the pool from fresh draws every this many iterations (0 = never).
    pub pool_refresh_every: usize,
    pub checkpoint_every: usize,
}

impl Default for DiffusionStage {
    fn default() -> Self {
        Self { schedule: ScheduleConfig::default(), model: UNetConfig::default(), train: DiffusionTrainConfig::default(), pool_size: 2048, pool_refresh_every: 0, checkpoint_every: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub triplets: usize,
    pub seed: u64,
    /// LPIPS backbone checkpoint; LPIPS is reported absent without it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lpips_weights: Option<PathBuf>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { triplets: 56, seed: 2024, lpips_weights: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub window: WindowConfig,
    pub degradation: DegradationConfig,
    pub autoencoder: AutoencoderStage,
    pub diffusion: DiffusionStage,
    pub evaluation: EvaluationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::fullscale()
    }
}

impl ExperimentConfig {
    /// 256 px frames, Adam at 5e-5, 44 × 4 = 176 effective batch, 25 000 iterations.
    pub fn fullscale() -> Self {
        Self {
            name: "fullscale".into(),
            seed: 0,
            output_dir: PathBuf::from("runs/fullscale"),
            data: DataConfig { source: DataSource::Dicom, root: Some(PathBuf::from("data/cine")), frame_size: 256, ..DataConfig::default() },
            window: WindowConfig::default(),
            degradation: DegradationConfig::realistic(4),
            autoencoder: AutoencoderStage {
                model: AutoencoderConfig { base_channels: 32, mid_channels: 64, ..AutoencoderConfig::default() },
                train: AeTrainConfig { steps: 20_000, warmup_steps: 2_000, batch_size: 8, learning_rate: 2e-4, ..AeTrainConfig::default() },
                ..AutoencoderStage::default()
            },
            diffusion: DiffusionStage {
                schedule: ScheduleConfig::default(),
                model: UNetConfig { latent_channels: 9, base_channels: 64, time_dim: 64, seed: 0 },
                train: DiffusionTrainConfig {
                    iterations: 25_000,
                    batch_size: 44,
                    grad_accum: 4,
                    learning_rate: 5e-5,
                    warmup_iterations: 0,
                    grad_clip: 0.0,
                    seed: 0,
                },
                pool_size: 2048,
                pool_refresh_every: 500,
                checkpoint_every: 1000,
            },
            evaluation: EvaluationConfig { triplets: 200, ..EvaluationConfig::default() },
        }
    }

    /// Phantom data at 64 px (16 px latents), sized for a laptop CPU.
    pub fn toy() -> Self {
        Self {
            name: "toy".into(),
            seed: 0,
            output_dir: PathBuf::from("runs/toy"),
            data: DataConfig { source: DataSource::Phantom, frame_size: 64, ..DataConfig::default() },
            window: WindowConfig::default(),
            degradation: DegradationConfig::realistic(4),
            autoencoder: AutoencoderStage {
                model: AutoencoderConfig { base_channels: 12, mid_channels: 24, ..AutoencoderConfig::default() },
                train: AeTrainConfig { steps: 800, warmup_steps: 300, batch_size: 8, eval_every: 100, target_psnr: Some(32.0), ..AeTrainConfig::default() },
                ..AutoencoderStage::default()
            },
            diffusion: DiffusionStage {
                schedule: ScheduleConfig::default(),
                model: UNetConfig { latent_channels: 9, base_channels: 32, time_dim: 32, seed: 0 },
                train: DiffusionTrainConfig { iterations: 1500, batch_size: 16, grad_accum: 1, learning_rate: 5e-4, warmup_iterations: 50, grad_clip: 1.0, seed: 0 },
                pool_size: 2048,
                pool_refresh_every: 0,
                checkpoint_every: 500,
            },
            evaluation: EvaluationConfig { triplets: 56, ..EvaluationConfig::default() },
        }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "toy" => Some(Self::toy()),
            "fullscale" => Some(Self::fullscale()),
            _ => None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is serialisable")
    }

    /// Read a TOML file. Relative paths inside it resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.output_dir);
        cfg.data.root.as_mut().map(fix);
        cfg.autoencoder.checkpoint.as_mut().map(fix);
        cfg.evaluation.lpips_weights.as_mut().map(fix);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let t = &self.diffusion.train;
        if t.batch_size == 0 || t.grad_accum == 0 {
            return bad("batch_size and grad_accum must be at least 1".into());
        }
        let scale = self.degradation.scale as usize;
        let size = self.data.frame_size;
        if scale == 0 || !size.is_multiple_of(scale * crate::autoencoder::DOWNSAMPLE * 2) {
            return bad(format!("frame_size {size} must be divisible by {}", scale.max(1) * crate::autoencoder::DOWNSAMPLE * 2));
        }
        if self.window.k < 4 {
            return bad(format!("window k = {} needs at least 3 interior frames", self.window.k));
        }
        if self.diffusion.model.latent_channels != 3 * self.autoencoder.model.latent_channels {
            return bad(format!(
                "denoiser latent_channels {} must be 3 × autoencoder latent_channels {}",
                self.diffusion.model.latent_channels, self.autoencoder.model.latent_channels
            ));
        }
        if self.evaluation.triplets == 0 {
            return bad("evaluation.triplets must be positive".into());
        }
        if !(0.0..1.0).contains(&self.data.eval_fraction) {
            return bad("data.eval_fraction must lie in [0, 1)".into());
        }
        match self.data.source {
            DataSource::Phantom => {
                let p = &self.data.phantom;
                if p.train_clips == 0 || p.eval_clips == 0 || p.frames_per_clip < self.window.k + 1 {
                    return bad("phantom set needs clips and at least k + 1 frames".into());
                }
            }
            _ => match &self.data.root {
                None => return bad("data.root is required for on-disk datasets".into()),
                Some(r) if !r.is_dir() => return Err(HarnessError::DataUnavailable(format!("{} is not a directory", r.display()))),
                _ => {}
            },
        }
        if let Some(p) = &self.autoencoder.checkpoint {
            if !p.is_file() {
                return Err(HarnessError::DataUnavailable(format!("autoencoder checkpoint {} not found", p.display())));
            }
        }
        self.degradation.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.window.flow.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.diffusion.schedule.build().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.diffusion.model.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.autoencoder.model.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// Hash of every setting that shapes the trained denoiser. Output paths,
    /// the iteration budget and checkpoint cadence are excluded so a run can
    /// be moved or extended.
    pub fn training_fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.diffusion.train.iterations = 0;
        c.diffusion.checkpoint_every = 0;
        c.evaluation = EvaluationConfig::default();
        c.name = String::new();
        let digest = Sha256::digest(c.to_toml_string().as_bytes());
        digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_config_files_match_the_profiles() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ["toy", "fullscale"] {
            let text = std::fs::read_to_string(dir.join(format!("{name}.toml"))).unwrap();
            let shipped: ExperimentConfig = toml::from_str(&text).unwrap();
            let mut want = ExperimentConfig::profile(name).unwrap();
            want.output_dir = format!("../runs/{name}").into();
            if want.data.root.is_some() {
                want.data.root = Some("../data/cine".into());
            }
            assert_eq!(shipped, want, "{name}");
        }
        let toy = ExperimentConfig::load(&dir.join("toy.toml")).unwrap();
        assert!(toy.output_dir.ends_with("configs/../runs/toy"));
    }

    #[test]
    fn profiles_round_trip_through_toml() {
        for cfg in [ExperimentConfig::toy(), ExperimentConfig::fullscale()] {
            let text = cfg.to_toml_string();
            let back: ExperimentConfig = toml::from_str(&text).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn fullscale_has_the_published_optimiser_settings() {
        let t = ExperimentConfig::fullscale().diffusion.train;
        assert_eq!(t.learning_rate, 5e-5);
        assert_eq!((t.batch_size, t.grad_accum, t.effective_batch()), (44, 4, 176));
        assert_eq!(t.iterations, 25_000);
        assert_eq!(ExperimentConfig::fullscale().diffusion.schedule.steps, 15);
    }

    #[test]
    fn toy_validates_and_fingerprint_ignores_budget() {
        let cfg = ExperimentConfig::toy();
        cfg.validate().unwrap();
        let mut longer = cfg.clone();
        longer.diffusion.train.iterations = 5000;
        longer.output_dir = "elsewhere".into();
        assert_eq!(cfg.training_fingerprint(), longer.training_fingerprint());
        let mut other = cfg.clone();
        other.diffusion.train.learning_rate = 1e-3;
        assert_ne!(cfg.training_fingerprint(), other.training_fingerprint());
    }

    #[test]
    fn partial_toml_fills_defaults_and_rejects_bad_values() {
        let cfg = ExperimentConfig::from_toml_str("name = \"x\"\n[data]\nsource = \"phantom\"\nframe_size = 64\n").unwrap();
        assert_eq!(cfg.data.frame_size, 64);
        assert!(ExperimentConfig::from_toml_str("[diffusion.train]\nbatch_size = 0\n[data]\nsource = \"phantom\"\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[data]\nsource = \"phantom\"\nframe_size = 60\n").is_err());
        assert!(matches!(
            ExperimentConfig::from_toml_str("[data]\nsource = \"dicom\"\nroot = \"/definitely/not/here\"\n"),
            Err(HarnessError::DataUnavailable(_))
        ));
    }
}
