use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array2, Array3, Axis};

use super::sample::{assemble_training_sample, decode_stacks, encode_stacks, sample_seed, triplet_frame, upscale_triplet, TrainingSample};
use super::train::load_denoiser;
use super::{load_clips, ExperimentConfig, HarnessError, RunDir};
use crate::autoencoder::VqAutoencoder;
use crate::data::pgm::write_unit_f32;
use crate::data::CineClip;
use crate::diffusion::{sample, Denoiser, DiffusionSchedule};
use crate::spatial::DegradationMode;
use crate::temporal::sample_training_window;
use crate::metrics::{score_frame, Lpips, MetricReport, ScoreAccumulator};

pub const BASELINE_ROW: &str = "Baseline";
pub const MODEL_ROW: &str = "LDM";
/// Separates the sampler's noise stream from the sample-assembly stream.
const SAMPLER_SALT: u64 = 0x5a3b_1e00_0000_0007;

/// What produces the SR output besides the bicubic baseline.
#[derive(Clone, Copy)]
pub enum ModelUnderTest<'a> {
    Denoiser(&'a dyn Denoiser),
    /// The autoencoder reconstruction of the ground truth: an upper bound for
    /// any latent model.
    OracleLatents,
}

/// The fixed evaluation triplets: sample `i` comes from clip `i mod n` with a
/// seed derived from the evaluation seed.
pub fn build_eval_samples(config: &ExperimentConfig, clips: &[CineClip]) -> Result<Vec<TrainingSample>, HarnessError> {
    if clips.is_empty() || config.evaluation.triplets == 0 {
        return Err(HarnessError::EmptyEvalSet);
    }
    (0..config.evaluation.triplets)
        .map(|i| assemble_training_sample(&clips[i % clips.len()], config, sample_seed(config.evaluation.seed, i as u64)))
        .collect()
}

fn latent_l1(ae: &VqAutoencoder, out: &Array3<f32>, gt_latent: &ndarray::Array4<f32>) -> Result<f64, HarnessError> {
    let z = encode_stacks(ae, out.view())?;
    let sum: f64 = z.iter().zip(gt_latent).map(|(a, b)| (a - b).abs() as f64).sum();
    Ok(sum / z.len() as f64)
}

/// One SR output per sample, `[3, H, W]`.
fn model_output(
    ae: &VqAutoencoder,
    model: ModelUnderTest<'_>,
    schedule: &DiffusionSchedule,
    s: &TrainingSample,
    upscaled: &Array3<f32>,
    seed: u64,
) -> Result<Array3<f32>, HarnessError> {
    match model {
        ModelUnderTest::OracleLatents => Ok(ae.reconstruct(s.gt_triplet.view())?),
        ModelUnderTest::Denoiser(d) => {
            let y = encode_stacks(ae, upscaled.view())?;
            let out = sample(d, y.view(), y.view(), schedule, seed, false)?;
            decode_stacks(ae, &out.x0)
        }
    }
}

/// Score the baseline and optionally a model on `samples`. Each frame of each
/// triplet counts as one image.
pub fn evaluate_samples(
    config: &ExperimentConfig,
    ae: Option<&VqAutoencoder>,
    model: Option<ModelUnderTest<'_>>,
    samples: &[TrainingSample],
    lpips: Option<&Lpips>,
) -> Result<MetricReport, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptyEvalSet);
    }
    if model.is_some() && ae.is_none() {
        return Err(HarnessError::Config("a model needs its autoencoder".into()));
    }
    let schedule = config.diffusion.schedule.build()?;
    let mut base = ScoreAccumulator::new(BASELINE_ROW);
    let mut ours = ScoreAccumulator::new(MODEL_ROW);
    for (i, s) in samples.iter().enumerate() {
        let (_, h, w) = s.gt_triplet.dim();
        let up = upscale_triplet(s.lr_triplet.view(), h, w)?;
        let gt_latent = ae.map(|ae| encode_stacks(ae, s.gt_triplet.view())).transpose()?;
        let score = |acc: &mut ScoreAccumulator, out: &Array3<f32>| -> Result<(), HarnessError> {
            let l1 = match (ae, &gt_latent) {
                (Some(ae), Some(g)) => Some(latent_l1(ae, out, g)?),
                _ => None,
            };
            for f in 0..3 {
                let mut fs = score_frame(s.gt_triplet.index_axis(Axis(0), f), out.index_axis(Axis(0), f), lpips)?;
                fs.latent_l1 = l1;
                acc.push(fs);
            }
            Ok(())
        };
        score(&mut base, &up)?;
        if let (Some(m), Some(ae)) = (model, ae) {
            let out = model_output(ae, m, &schedule, s, &up, sample_seed(config.evaluation.seed ^ SAMPLER_SALT, i as u64))?;
            score(&mut ours, &out)?;
        }
    }
    let mut rows = vec![base.finish()?];
    if !ours.is_empty() {
        rows.push(ours.finish()?);
    }
    Ok(MetricReport { rows })
}

/// `reports/{name}.txt` (table, then key = value lines) and `reports/{name}.json`.
pub fn write_report(run: &RunDir, name: &str, report: &MetricReport) -> Result<PathBuf, HarnessError> {
    let dir = run.reports();
    fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;
    let txt = dir.join(format!("{name}.txt"));
    fs::write(&txt, format!("{}\n{}", report.to_table(), report.to_key_value())).map_err(HarnessError::io(&txt))?;
    let json = dir.join(format!("{name}.json"));
    fs::write(&json, serde_json::to_string_pretty(report).expect("serialisable")).map_err(HarnessError::io(&json))?;
    Ok(txt)
}

/// `realistic` or `bicubic`: reports for the two modes sit side by side.
pub fn degradation_tag(config: &ExperimentConfig) -> &'static str {
    match config.degradation.mode {
        DegradationMode::Realistic => "realistic",
        DegradationMode::BicubicOnly => "bicubic",
    }
}

fn load_autoencoder(config: &ExperimentConfig, run: &RunDir) -> Result<Option<VqAutoencoder>, HarnessError> {
    let path = config.autoencoder.checkpoint.clone().unwrap_or_else(|| run.autoencoder_checkpoint());
    if !path.is_file() {
        return Ok(None);
    }
    Ok(Some(VqAutoencoder::load(&path)?))
}

fn require_autoencoder(config: &ExperimentConfig, run: &RunDir) -> Result<VqAutoencoder, HarnessError> {
    load_autoencoder(config, run)?.ok_or_else(|| HarnessError::DataUnavailable(format!("no autoencoder checkpoint in {}", run.checkpoints().display())))
}

fn checkpoint_or_latest(run: &RunDir, checkpoint: Option<&Path>) -> Result<PathBuf, HarnessError> {
    let path = checkpoint.map_or_else(|| run.denoiser_latest(), Path::to_path_buf);
    if !path.is_file() {
        return Err(HarnessError::DataUnavailable(format!("no denoiser checkpoint at {}", path.display())));
    }
    Ok(path)
}

/// Baseline and model on the held-out triplets; writes `reports/eval_{mode}.*`.
pub fn run_evaluation(config: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<MetricReport, HarnessError> {
    config.validate()?;
    let run = config.run_dir();
    let ae = require_autoencoder(config, &run)?;
    let (net, _) = load_denoiser(&checkpoint_or_latest(&run, checkpoint)?, &ae)?;
    let lpips = Lpips::load_optional(config.evaluation.lpips_weights.as_deref())?;
    let clips = load_clips(config)?;
    let samples = build_eval_samples(config, &clips.eval)?;
    let report = evaluate_samples(config, Some(&ae), Some(ModelUnderTest::Denoiser(&net)), &samples, lpips.as_ref())?;
    write_report(&run, &format!("eval_{}", degradation_tag(config)), &report)?;
    Ok(report)
}

/// Bicubic baseline only; the latent proxy is included when an autoencoder
/// checkpoint exists. Writes `reports/baseline_{mode}.*`.
pub fn run_baseline(config: &ExperimentConfig) -> Result<MetricReport, HarnessError> {
    config.validate()?;
    let run = config.run_dir();
    let ae = load_autoencoder(config, &run)?;
    let lpips = Lpips::load_optional(config.evaluation.lpips_weights.as_deref())?;
    let clips = load_clips(config)?;
    let samples = build_eval_samples(config, &clips.eval)?;
    let report = evaluate_samples(config, ae.as_ref(), None, &samples, lpips.as_ref())?;
    write_report(&run, &format!("baseline_{}", degradation_tag(config)), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Default)]
pub struct InferenceOptions {
    /// Sampler noise seed.
    pub seed: u64,
    /// Picks the window and the degradation.
    pub window_seed: u64,
    pub dump_trajectory: bool,
    /// Write the window's optical-flow interpolated frames.
    pub dump_interpolated: bool,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct InferenceOutcome {
    pub dir: PathBuf,
    pub frames: Vec<PathBuf>,
    pub trajectory: Vec<PathBuf>,
    pub interpolated: Vec<PathBuf>,
    pub sample: TrainingSample,
    /// `[3, H, W]`.
    pub sr: Array3<f32>,
}

fn side_by_side(frames: &Array3<f32>, sample: usize) -> Array2<f32> {
    let views: Vec<_> = (0..3).map(|i| triplet_frame(frames, sample, i)).collect();
    concatenate(Axis(1), &views).expect("same height")
}

/// Super-resolve one interpolated triplet drawn from `clip`. Writes
/// `sr_frame_{1,2,3}.pgm`, `lr_bicubic_{1,2,3}.pgm`, `gt_frame_{1,2,3}.pgm`
/// and optionally `trajectory_{000,025,050,075,100}.pgm` and `interp_{k}.pgm`.
pub fn run_inference(config: &ExperimentConfig, clip: &CineClip, options: &InferenceOptions) -> Result<InferenceOutcome, HarnessError> {
    config.validate()?;
    let run = config.run_dir();
    let ae = require_autoencoder(config, &run)?;
    let (net, _) = load_denoiser(&checkpoint_or_latest(&run, options.checkpoint.as_deref())?, &ae)?;
    let schedule = config.diffusion.schedule.build()?;
    let s = assemble_training_sample(clip, config, options.window_seed)?;
    let (_, h, w) = s.gt_triplet.dim();
    let up = upscale_triplet(s.lr_triplet.view(), h, w)?;
    let y = encode_stacks(&ae, up.view())?;
    let out = sample(&net, y.view(), y.view(), &schedule, options.seed, options.dump_trajectory)?;
    let sr = decode_stacks(&ae, &out.x0)?;

    let dir = run.dumps().join(format!("{}_{}_w{}_s{}", clip.patient_id, clip.slice_id, options.window_seed, options.seed));
    fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;
    let write = |path: PathBuf, img: ndarray::ArrayView2<f32>| -> Result<PathBuf, HarnessError> {
        write_unit_f32(&path, img).map_err(HarnessError::io(&path))?;
        Ok(path)
    };
    let mut frames = Vec::new();
    for i in 0..3 {
        frames.push(write(dir.join(format!("sr_frame_{}.pgm", i + 1)), sr.slice(s![i, .., ..]))?);
        write(dir.join(format!("lr_bicubic_{}.pgm", i + 1)), up.slice(s![i, .., ..]))?;
        write(dir.join(format!("gt_frame_{}.pgm", i + 1)), s.gt_triplet.slice(s![i, .., ..]))?;
    }
    let mut trajectory = Vec::new();
    for snap in out.trajectory.iter().flatten() {
        let decoded = decode_stacks(&ae, &snap.state)?;
        let name = format!("trajectory_{:03}.pgm", (snap.progress * 100.0).round() as usize);
        trajectory.push(write(dir.join(name), side_by_side(&decoded, 0).view())?);
    }
    let mut interpolated = Vec::new();
    if options.dump_interpolated {
        let window = sample_training_window(clip, config.window.k, options.window_seed, &config.window.flow)?;
        for (k, f) in window.interpolated.outer_iter().enumerate() {
            interpolated.push(write(dir.join(format!("interp_{}.pgm", k + 1)), f)?);
        }
    }
    let meta = dir.join("sample.json");
    fs::write(&meta, serde_json::to_string_pretty(&s.meta).expect("serialisable")).map_err(HarnessError::io(&meta))?;
    Ok(InferenceOutcome { dir, frames, trajectory, interpolated, sample: s, sr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::AutoencoderConfig;
    use crate::data::{synth_phantom_clip, PhantomConfig};
    use crate::diffusion::{UNet, UNetConfig};

    fn setup() -> (ExperimentConfig, Vec<CineClip>, VqAutoencoder) {
        let mut cfg = ExperimentConfig::toy();
        cfg.data.frame_size = 32;
        cfg.evaluation.triplets = 4;
        let clips = vec![synth_phantom_clip(&PhantomConfig { size: 32, ..Default::default() }, 12, 1).unwrap()];
        let ae = VqAutoencoder::new(AutoencoderConfig { base_channels: 4, mid_channels: 4, n_codes: 8, ..Default::default() }).unwrap();
        (cfg, clips, ae)
    }

    #[test]
    fn eval_samples_are_fixed_by_the_seed() {
        let (cfg, clips, _) = setup();
        let a = build_eval_samples(&cfg, &clips).unwrap();
        assert_eq!(a, build_eval_samples(&cfg, &clips).unwrap());
        let mut other = cfg.clone();
        other.evaluation.seed += 1;
        assert_ne!(a, build_eval_samples(&other, &clips).unwrap());
        assert!(matches!(build_eval_samples(&cfg, &[]), Err(HarnessError::EmptyEvalSet)));
    }

    #[test]
    fn report_rows_and_counts() {
        let (cfg, clips, ae) = setup();
        let samples = build_eval_samples(&cfg, &clips).unwrap();
        let net = UNet::new(UNetConfig { latent_channels: 9, base_channels: 4, time_dim: 8, seed: 0 }).unwrap();
        let r = evaluate_samples(&cfg, Some(&ae), Some(ModelUnderTest::Denoiser(&net)), &samples, None).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|row| row.n_images == 12 && row.lpips.is_none() && row.latent_l1.is_some()));
        let b = evaluate_samples(&cfg, None, None, &samples, None).unwrap();
        assert_eq!(b.rows.len(), 1);
        assert!(b.rows[0].latent_l1.is_none());
        assert_eq!(b.rows[0].psnr_db, r.row(BASELINE_ROW).unwrap().psnr_db);
        assert!(matches!(evaluate_samples(&cfg, None, None, &[], None), Err(HarnessError::EmptyEvalSet)));
    }

    #[test]
    fn baseline_row_is_bicubic() {
        let (cfg, clips, _) = setup();
        let samples = build_eval_samples(&cfg, &clips).unwrap();
        let r = evaluate_samples(&cfg, None, None, &samples[..1], None).unwrap();
        let s = &samples[0];
        let up = upscale_triplet(s.lr_triplet.view(), 32, 32).unwrap();
        let want = (0..3).map(|f| crate::metrics::psnr(s.gt_triplet.index_axis(Axis(0), f), up.index_axis(Axis(0), f)).unwrap()).sum::<f64>() / 3.0;
        assert!((r.rows[0].psnr_db - want).abs() < 1e-12);
    }
}
