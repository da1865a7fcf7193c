//! Desk-scale autoencoder training: L1 reconstruction plus codebook and
//! commitment losses with a straight-through quantizer. Adversarial terms
//! are not used.

use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView3, Axis, Ix4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{nearest_codes, AutoencoderError, VqAutoencoder};
use crate::metrics::psnr;
use crate::nn::{Adam, AdamConfig, GradStore, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeTrainConfig {
    pub steps: usize,
    /// Plain (unquantized) steps before the codebook is seeded from encoder outputs.
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub commitment: f64,
    /// Unused codes are reseeded from encoder outputs this often.
    pub reset_dead_codes_every: usize,
    pub eval_every: usize,
    /// Stop early once validation PSNR reaches this value.
    pub target_psnr: Option<f64>,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1200,
            warmup_steps: 300,
            batch_size: 8,
            learning_rate: 2e-3,
            commitment: 0.25,
            reset_dead_codes_every: 100,
            eval_every: 100,
            target_psnr: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeTrainRecord {
    pub step: usize,
    pub loss: f64,
    pub val_psnr: Option<f64>,
    pub quant_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeTrainReport {
    pub steps_run: usize,
    pub final_psnr: f64,
    /// Mean ‖z − q(z)‖ on the validation frames right after codebook seeding.
    pub quant_error_initial: f64,
    pub quant_error_final: f64,
    pub codes_in_use: usize,
    pub records: Vec<AeTrainRecord>,
}

fn mean_quant_error(ae: &VqAutoencoder, frames: ArrayView3<f32>) -> Result<f64, AutoencoderError> {
    let z = ae.encode_frames(frames)?;
    let cb = ae.codebook();
    let idx = nearest_codes(z.view(), &cb);
    let (b, c, h, w) = z.dim();
    let mut total = 0.0;
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let k = idx[(bi * h + y) * w + x];
                let d2: f32 = (0..c).map(|ci| (z[[bi, ci, y, x]] - cb.entries[[k, ci]]).powi(2)).sum();
                total += (d2 as f64).sqrt();
            }
        }
    }
    Ok(total / (b * h * w) as f64)
}

/// Mean PSNR of quantized reconstructions.
pub fn validation_psnr(ae: &VqAutoencoder, frames: ArrayView3<f32>) -> Result<f64, AutoencoderError> {
    let rec = ae.reconstruct(frames)?;
    let n = frames.len_of(Axis(0));
    let total: f64 = (0..n)
        .map(|i| psnr(frames.index_axis(Axis(0), i), rec.index_axis(Axis(0), i)).expect("shapes match").min(100.0))
        .sum();
    Ok(total / n as f64)
}

fn encoder_samples(ae: &VqAutoencoder, frames: ArrayView3<f32>, rng: &mut ChaCha8Rng, max_frames: usize) -> Result<Array2<f32>, AutoencoderError> {
    let n = frames.len_of(Axis(0));
    let mut picks: Vec<usize> = (0..n).collect();
    picks.shuffle(rng);
    picks.truncate(max_frames.min(n));
    let chosen = frames.select(Axis(0), &picks);
    let z = ae.encode_frames(chosen.view())?;
    let (b, c, h, w) = z.dim();
    Ok(Array2::from_shape_fn((b * h * w, c), |(i, ci)| {
        let (bi, rest) = (i / (h * w), i % (h * w));
        z[[bi, ci, rest / w, rest % w]]
    }))
}

/// Fill `rows` of the codebook with distinct encoder outputs.
fn seed_codes(entries: &mut Array2<f32>, rows: &[usize], samples: &Array2<f32>, rng: &mut ChaCha8Rng) {
    let mut order: Vec<usize> = (0..samples.nrows()).collect();
    order.shuffle(rng);
    let mut it = order.into_iter().cycle();
    for &r in rows {
        let src = it.next().expect("samples are non-empty");
        for c in 0..entries.ncols() {
            // A small jitter keeps reused samples from producing duplicate codes.
            entries[[r, c]] = samples[[src, c]] + rng.random_range(-1e-3..1e-3);
        }
    }
}

/// Train on `frames [N, H, W]`, evaluating on `val [M, H, W]`. The callback
/// sees every record as it is produced.
pub fn train_autoencoder(
    ae: &mut VqAutoencoder,
    frames: ArrayView3<f32>,
    val: ArrayView3<f32>,
    cfg: &AeTrainConfig,
    mut on_record: impl FnMut(&AeTrainRecord),
) -> Result<AeTrainReport, AutoencoderError> {
    let n = frames.len_of(Axis(0));
    if n == 0 || val.len_of(Axis(0)) == 0 {
        return Err(AutoencoderError::Config("training and validation sets must be non-empty".into()));
    }
    if cfg.batch_size == 0 || cfg.steps <= cfg.warmup_steps {
        return Err(AutoencoderError::Config("need batch_size ≥ 1 and steps > warmup_steps".into()));
    }
    let (_, h, w) = frames.dim();
    ae.check_frames(h, w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam_cfg = AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() };
    let mut opt = Adam::new(adam_cfg, ae.params());
    let mut grads = GradStore::zeros_like(ae.params());
    let n_codes = ae.config.n_codes;
    let mut usage = vec![0usize; n_codes];
    let mut records = Vec::new();
    let mut quant_error_initial = f64::NAN;
    let mut steps_run = 0;
    let mut last_psnr = f64::NAN;

    for step in 0..cfg.steps {
        let quantizing = step >= cfg.warmup_steps;
        if step == cfg.warmup_steps {
            let samples = encoder_samples(ae, frames, &mut rng, 64)?;
            let mut entries = ae.codebook().entries;
            let rows: Vec<usize> = (0..n_codes).collect();
            seed_codes(&mut entries, &rows, &samples, &mut rng);
            ae.set_codebook(entries);
            quant_error_initial = mean_quant_error(ae, val)?;
        }
        if quantizing && cfg.reset_dead_codes_every > 0 && step > cfg.warmup_steps && (step - cfg.warmup_steps).is_multiple_of(cfg.reset_dead_codes_every) {
            let dead: Vec<usize> = (0..n_codes).filter(|&i| usage[i] == 0).collect();
            if !dead.is_empty() {
                let samples = encoder_samples(ae, frames, &mut rng, 32)?;
                let mut entries = ae.codebook().entries;
                seed_codes(&mut entries, &dead, &samples, &mut rng);
                ae.set_codebook(entries);
            }
            usage.iter_mut().for_each(|u| *u = 0);
        }

        let picks: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..n)).collect();
        let batch = frames.select(Axis(0), &picks).insert_axis(Axis(1));
        let g = Graph::new();
        let x = g.constant(batch.into_dyn());
        let z = ae.encode_graph(&g, x);
        let loss = if quantizing {
            let zv = g.value(z);
            let z4 = zv.view().into_dimensionality::<Ix4>().expect("4-D latent");
            let (b, _, lh, lw) = z4.dim();
            let idx = nearest_codes(z4, &ae.codebook());
            for &k in &idx {
                usage[k] += 1;
            }
            let cb = g.param(ae.params(), ae.codebook_id());
            let zq = g.gather_codes(cb, Arc::new(idx), (b, lh, lw));
            let st = g.straight_through(z, zq);
            let y = ae.decode_graph(&g, st);
            let rec = g.l1(y, x);
            let codebook_term = g.mse(zq, g.detach(z));
            let commit = g.scale(g.mse(z, g.detach(zq)), cfg.commitment);
            g.add(rec, g.add(codebook_term, commit))
        } else {
            let y = ae.decode_graph(&g, z);
            g.l1(y, x)
        };
        let loss_value = g.value(loss).iter().next().copied().unwrap_or(f32::NAN) as f64;
        grads.zero();
        g.backward(loss).accumulate_into(&mut grads);
        opt.step(ae.params_mut(), &grads);
        steps_run = step + 1;

        let eval_now = cfg.eval_every > 0 && (steps_run % cfg.eval_every == 0) && quantizing;
        let last = steps_run == cfg.steps;
        let mut rec = AeTrainRecord { step: steps_run, loss: loss_value, val_psnr: None, quant_error: None };
        if eval_now || last {
            last_psnr = validation_psnr(ae, val)?;
            rec.val_psnr = Some(last_psnr);
            rec.quant_error = Some(mean_quant_error(ae, val)?);
        }
        on_record(&rec);
        records.push(rec);
        if let (Some(target), true) = (cfg.target_psnr, eval_now || last) {
            if last_psnr >= target {
                break;
            }
        }
    }

    let z = ae.encode_frames(val)?;
    let in_use = {
        let idx = nearest_codes(z.view(), &ae.codebook());
        let mut seen = vec![false; n_codes];
        idx.iter().for_each(|&k| seen[k] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if last_psnr.is_nan() {
        last_psnr = validation_psnr(ae, val)?;
    }
    Ok(AeTrainReport {
        steps_run,
        final_psnr: last_psnr,
        quant_error_initial,
        quant_error_final: mean_quant_error(ae, val)?,
        codes_in_use: in_use,
        records,
    })
}

/// Every frame of every clip, stacked `[N, H, W]`.
pub fn stack_frames<'a>(clips: impl IntoIterator<Item = ArrayView3<'a, f32>>) -> Array3<f32> {
    let parts: Vec<ArrayView3<f32>> = clips.into_iter().collect();
    ndarray::concatenate(Axis(0), &parts).expect("clips share a frame size")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::AutoencoderConfig;
    use crate::data::{synth_phantom_clip, PhantomConfig};

    #[test]
    fn short_training_reduces_loss_and_keeps_codes_distinct() {
        let pc = PhantomConfig { size: 32, ..Default::default() };
        let clip = synth_phantom_clip(&pc, 12, 1).unwrap();
        let val = synth_phantom_clip(&pc, 4, 2).unwrap();
        let mut ae = VqAutoencoder::new(AutoencoderConfig { base_channels: 6, mid_channels: 8, n_codes: 32, ..Default::default() }).unwrap();
        let cfg = AeTrainConfig { steps: 120, warmup_steps: 60, batch_size: 4, eval_every: 30, reset_dead_codes_every: 30, ..Default::default() };
        let mut seen = 0;
        let report = train_autoencoder(&mut ae, clip.frames.view(), val.frames.view(), &cfg, |_| seen += 1).unwrap();
        assert_eq!(seen, report.records.len());
        assert_eq!(report.steps_run, 120);
        let early: f64 = report.records[..10].iter().map(|r| r.loss).sum::<f64>() / 10.0;
        let late: f64 = report.records[50..60].iter().map(|r| r.loss).sum::<f64>() / 10.0;
        assert!(late < early, "{early} -> {late}");
        assert!(report.final_psnr.is_finite());
        assert!(ae.codebook().duplicates(1e-6).is_empty());
        assert!(report.codes_in_use >= 1);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut ae = VqAutoencoder::new(AutoencoderConfig { base_channels: 2, mid_channels: 2, n_codes: 4, ..Default::default() }).unwrap();
        let f = Array3::<f32>::zeros((2, 8, 8));
        let cfg = AeTrainConfig { steps: 5, warmup_steps: 5, ..Default::default() };
        assert!(train_autoencoder(&mut ae, f.view(), f.view(), &cfg, |_| {}).is_err());
    }
}
