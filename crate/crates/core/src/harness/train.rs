use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array3, Array4, ArrayD, Axis};

use super::sample::{assemble_training_sample, encode_samples, sample_seed};
use super::{load_clips, ClipSplit, ExperimentConfig, HarnessError, RunDir};
use crate::autoencoder::{stack_frames, train_autoencoder, AeTrainReport, VqAutoencoder};
use crate::data::CineClip;
use crate::diffusion::{DenoiserTrainer, DiffusionTrainRecord, LatentPairs, UNet};
use crate::nn::Checkpoint;

const OPTIMIZER_KIND: &str = "adam_state";
/// Frames used to evaluate the autoencoder during pre-training.
const AE_VAL_FRAMES: usize = 48;
/// Samples assembled and encoded together while filling the pool.
const POOL_CHUNK: usize = 64;

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Stop after this many iterations in this call (simulates an interruption).
    pub stop_after: Option<usize>,
    /// Print one progress line every this many iterations (0 = silent).
    pub progress_every: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub autoencoder_report: Option<AeTrainReport>,
    pub autoencoder_psnr: f64,
    pub resumed_from: Option<usize>,
    pub final_iteration: usize,
    pub records: Vec<DiffusionTrainRecord>,
}

fn every_nth(frames: &Array3<f32>, max: usize) -> Array3<f32> {
    let n = frames.len_of(Axis(0));
    let stride = n.div_ceil(max.max(1)).max(1);
    frames.slice(s![..;stride, .., ..]).to_owned()
}

fn frames_of(clips: &[CineClip]) -> Array3<f32> {
    stack_frames(clips.iter().map(|c| c.frames.view()))
}

/// Load the autoencoder named by the config or the run directory, or pre-train one.
pub fn prepare_autoencoder(config: &ExperimentConfig, run: &RunDir, clips: &ClipSplit, progress: bool) -> Result<(VqAutoencoder, Option<AeTrainReport>, f64), HarnessError> {
    let stage = &config.autoencoder;
    let val = every_nth(&frames_of(&clips.eval), AE_VAL_FRAMES);
    let existing = stage.checkpoint.clone().or_else(|| Some(run.autoencoder_checkpoint()).filter(|p| p.is_file()));
    if let Some(path) = existing {
        let ae = VqAutoencoder::load(&path)?;
        if ae.config != stage.model {
            return Err(HarnessError::CheckpointMismatch(format!("{} holds {:?}, config asks for {:?}", path.display(), ae.config, stage.model)));
        }
        let psnr = crate::autoencoder::validation_psnr(&ae, val.view())?;
        return Ok((ae, None, psnr));
    }
    if !stage.pretrain {
        return Err(HarnessError::DataUnavailable("no autoencoder checkpoint and pre-training is disabled".into()));
    }
    let train = frames_of(&clips.train);
    let mut ae = VqAutoencoder::new(stage.model.clone())?;
    let log_path = run.autoencoder_log();
    let mut log = File::create(&log_path).map_err(HarnessError::io(&log_path))?;
    let mut io_err = None;
    let report = train_autoencoder(&mut ae, train.view(), val.view(), &stage.train, |r| {
        if progress {
            if let Some(p) = r.val_psnr {
                eprintln!("autoencoder step {:>5}  loss {:.5}  val psnr {:.2} dB", r.step, r.loss, p);
            }
        }
        if let Err(e) = writeln!(log, "{}", serde_json::to_string(r).expect("serialisable")) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(HarnessError::Io { path: log_path, source: e });
    }
    if report.final_psnr < stage.min_psnr {
        return Err(HarnessError::AutoencoderBelowThreshold { psnr: report.final_psnr, min: stage.min_psnr });
    }
    ae.save(&run.autoencoder_checkpoint())?;
    let psnr = report.final_psnr;
    Ok((ae, Some(report), psnr))
}

/// Assemble `config.diffusion.pool_size` training samples for pool `epoch`
/// and cache their stacked latents.
pub fn build_latent_pool(config: &ExperimentConfig, ae: &VqAutoencoder, clips: &[CineClip], epoch: u64) -> Result<LatentPairs, HarnessError> {
    if clips.is_empty() {
        return Err(HarnessError::DataUnavailable("no training clips".into()));
    }
    let n = config.diffusion.pool_size.max(1);
    let mut x0s = Vec::new();
    let mut ys = Vec::new();
    for start in (0..n).step_by(POOL_CHUNK) {
        let end = (start + POOL_CHUNK).min(n);
        let samples = (start..end)
            .map(|i| {
                let global = epoch * n as u64 + i as u64;
                let clip = &clips[(global % clips.len() as u64) as usize];
                assemble_training_sample(clip, config, sample_seed(config.seed, global))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (x0, y) = encode_samples(ae, &samples)?;
        x0s.push(x0);
        ys.push(y);
    }
    let cat = |v: &[Array4<f32>]| concatenate(Axis(0), &v.iter().map(|a| a.view()).collect::<Vec<_>>()).expect("same shape");
    let x0 = cat(&x0s);
    let y = cat(&ys);
    Ok(LatentPairs::new(x0, y.clone(), y)?)
}

fn save_optimizer(trainer: &DenoiserTrainer, path: &Path) -> Result<(), HarnessError> {
    let (step, m, v) = trainer.optimizer().state();
    let mut ck = Checkpoint::new(OPTIMIZER_KIND).with_header("adam_step", step).with_header("iteration", trainer.iteration());
    for (i, (mi, vi)) in m.iter().zip(v).enumerate() {
        ck.tensors.insert(format!("m.{i:04}"), mi.clone());
        ck.tensors.insert(format!("v.{i:04}"), vi.clone());
    }
    Ok(ck.save(path)?)
}

fn load_optimizer(path: &Path) -> Result<(usize, u64, Vec<ArrayD<f32>>, Vec<ArrayD<f32>>), HarnessError> {
    let ck = Checkpoint::load_kind(path, OPTIMIZER_KIND)?;
    let num = |k: &str| ck.header_value(k).and_then(|v| v.parse::<u64>().ok()).ok_or_else(|| HarnessError::CheckpointMismatch(format!("{} lacks {k}", path.display())));
    let (step, iteration) = (num("adam_step")?, num("iteration")? as usize);
    let pick = |prefix: &str| ck.tensors.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, v)| v.clone()).collect::<Vec<_>>();
    Ok((iteration, step, pick("m."), pick("v.")))
}

/// Load a denoiser checkpoint and confirm it was trained against `ae`.
pub fn load_denoiser(path: &Path, ae: &VqAutoencoder) -> Result<(UNet<f32>, Checkpoint), HarnessError> {
    let ck = Checkpoint::load_kind(path, crate::diffusion::CHECKPOINT_KIND)?;
    match ck.header_value("autoencoder") {
        Some(h) if h == ae.fingerprint() => {}
        other => {
            return Err(HarnessError::CheckpointMismatch(format!(
                "{} was trained against autoencoder {:?}, loaded autoencoder is {}",
                path.display(),
                other,
                ae.fingerprint()
            )))
        }
    }
    let net = UNet::from_checkpoint(&ck)?;
    Ok((net, ck))
}

/// Parse a JSON-lines training log.
pub fn read_log(path: &Path) -> Result<Vec<DiffusionTrainRecord>, HarnessError> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let f = File::open(path).map_err(HarnessError::io(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(HarnessError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?);
    }
    Ok(out)
}

/// Keep only records up to `iteration`, dropping anything logged after the
/// last checkpoint.
fn truncate_log(path: &Path, iteration: usize) -> Result<(), HarnessError> {
    let kept: Vec<_> = read_log(path)?.into_iter().filter(|r| r.iteration <= iteration).collect();
    let mut f = File::create(path).map_err(HarnessError::io(path))?;
    for r in kept {
        writeln!(f, "{}", serde_json::to_string(&r).expect("serialisable")).map_err(HarnessError::io(path))?;
    }
    Ok(())
}

fn save_checkpoint(trainer: &DenoiserTrainer, run: &RunDir, config: &ExperimentConfig, ae: &VqAutoencoder, frozen_hash: &str) -> Result<PathBuf, HarnessError> {
    let now = ae.fingerprint();
    if now != frozen_hash {
        return Err(HarnessError::CheckpointMismatch(format!("autoencoder weights changed during diffusion training ({frozen_hash} → {now})")));
    }
    let ck = trainer
        .net
        .to_checkpoint()
        .with_header("iteration", trainer.iteration())
        .with_header("config_fingerprint", config.training_fingerprint())
        .with_header("autoencoder", frozen_hash)
        .with_header("schedule", serde_json::to_string(&trainer.schedule.config).expect("serialisable"));
    let snapshot = run.denoiser_at(trainer.iteration());
    ck.save(&snapshot)?;
    let latest = run.denoiser_latest();
    fs::copy(&snapshot, &latest).map_err(HarnessError::io(&latest))?;
    save_optimizer(trainer, &run.optimizer_latest())?;
    Ok(latest)
}

/// Stage 1 (autoencoder) then stage 2 (denoiser). Resumes from
/// `checkpoints/denoiser-latest` when present.
pub fn run_training(config: &ExperimentConfig, options: &TrainOptions) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let run = config.run_dir();
    run.create()?;
    let cfg_path = run.root.join("config.toml");
    fs::write(&cfg_path, config.to_toml_string()).map_err(HarnessError::io(&cfg_path))?;
    let clips = load_clips(config)?;
    let progress = options.progress_every > 0;
    let (ae, ae_report, ae_psnr) = prepare_autoencoder(config, &run, &clips, progress)?;
    let frozen = ae.fingerprint();

    let schedule = config.diffusion.schedule.build()?;
    let fresh = || DenoiserTrainer::new(UNet::new(config.diffusion.model).map_err(HarnessError::from)?, schedule.clone(), config.diffusion.train.clone()).map_err(HarnessError::from);
    let log_path = run.train_log();
    let (mut trainer, resumed_from) = if run.denoiser_latest().is_file() {
        let (net, ck) = load_denoiser(&run.denoiser_latest(), &ae)?;
        let found = ck.header_value("config_fingerprint").unwrap_or("none").to_string();
        let expected = config.training_fingerprint();
        if found != expected {
            return Err(HarnessError::ResumeMismatch { found, expected });
        }
        let (iteration, step, m, v) = load_optimizer(&run.optimizer_latest())?;
        let mut t = DenoiserTrainer::new(net, schedule.clone(), config.diffusion.train.clone())?;
        t.resume(iteration, step, m, v)?;
        truncate_log(&log_path, iteration)?;
        (t, Some(iteration))
    } else {
        if log_path.exists() {
            fs::remove_file(&log_path).map_err(HarnessError::io(&log_path))?;
        }
        (fresh()?, None)
    };

    let total = config.diffusion.train.iterations;
    let budget_end = options.stop_after.map_or(total, |n| (trainer.iteration() + n).min(total));
    let mut log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(HarnessError::io(&log_path))?;
    let mut records = Vec::new();
    let refresh = config.diffusion.pool_refresh_every;
    let epoch_of = |it: usize| if refresh == 0 { 0 } else { (it / refresh) as u64 };
    let mut pool: Option<(u64, LatentPairs)> = None;
    let every = config.diffusion.checkpoint_every;
    let mut checkpoint = run.denoiser_latest();
    while trainer.iteration() < budget_end {
        let epoch = epoch_of(trainer.iteration());
        if pool.as_ref().is_none_or(|(e, _)| *e != epoch) {
            pool = Some((epoch, build_latent_pool(config, &ae, &clips.train, epoch)?));
        }
        let rec = trainer.step(&pool.as_ref().expect("pool built").1)?;
        writeln!(log, "{}", serde_json::to_string(&rec).expect("serialisable")).map_err(HarnessError::io(&log_path))?;
        if progress && rec.iteration % options.progress_every == 0 {
            eprintln!("denoiser iter {:>6}  loss {:.5}  |g| {:.3}  lr {:.2e}", rec.iteration, rec.loss, rec.grad_norm, rec.learning_rate);
        }
        records.push(rec);
        let it = trainer.iteration();
        if (every > 0 && it % every == 0) || it == budget_end {
            log.flush().map_err(HarnessError::io(&log_path))?;
            checkpoint = save_checkpoint(&trainer, &run, config, &ae, &frozen)?;
        }
    }
    if !checkpoint.is_file() {
        checkpoint = save_checkpoint(&trainer, &run, config, &ae, &frozen)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        log: log_path,
        autoencoder_report: ae_report,
        autoencoder_psnr: ae_psnr,
        resumed_from,
        final_iteration: trainer.iteration(),
        records,
    })
}
