//! Training-sample assembly: window → optical-flow interpolation → spatial
//! degradation, plus the latent-space views the diffusion stage consumes.

use ndarray::{concatenate, s, Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::autoencoder::VqAutoencoder;
use crate::data::CineClip;
use crate::spatial::{degrade, resize_bicubic_to};
use crate::temporal::sample_training_window;

/// Mixed into the sample seed so the degradation draw is independent of the window draw.
const DEGRADE_SALT: u64 = 0xde67_ade0_0000_0001;

/// Enough to regenerate the sample from its clip and the config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub patient_id: String,
    pub slice_id: String,
    pub k: usize,
    pub start_index: usize,
    pub triplet_offsets: [usize; 3],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// `[3, H/s, W/s]`.
    pub lr_triplet: Array3<f32>,
    /// `[3, H, W]`, original frames at the triplet's absolute indices.
    pub gt_triplet: Array3<f32>,
    pub meta: SampleMeta,
}

/// Seed of the `index`-th sample drawn from a stream rooted at `base`.
pub fn sample_seed(base: u64, index: u64) -> u64 {
    base ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17)
}

pub fn assemble_training_sample(clip: &CineClip, config: &ExperimentConfig, seed: u64) -> Result<TrainingSample, HarnessError> {
    let window = sample_training_window(clip, config.window.k, seed, &config.window.flow)?;
    let lr_triplet = degrade(window.interpolated_triplet().view(), &config.degradation, seed ^ DEGRADE_SALT)?;
    Ok(TrainingSample {
        lr_triplet,
        gt_triplet: window.gt_frames.clone(),
        meta: SampleMeta {
            patient_id: clip.patient_id.clone(),
            slice_id: clip.slice_id.clone(),
            k: window.k,
            start_index: window.start_index,
            triplet_offsets: window.triplet_offsets,
            seed,
        },
    })
}

/// Rebuild a sample from its metadata. Fails if the clip does not match.
pub fn regenerate_sample(meta: &SampleMeta, clip: &CineClip, config: &ExperimentConfig) -> Result<TrainingSample, HarnessError> {
    if clip.patient_id != meta.patient_id || clip.slice_id != meta.slice_id || config.window.k != meta.k {
        return Err(HarnessError::Config(format!("sample of {}/{} (k = {}) cannot be rebuilt from {}/{} (k = {})", meta.patient_id, meta.slice_id, meta.k, clip.patient_id, clip.slice_id, config.window.k)));
    }
    let s = assemble_training_sample(clip, config, meta.seed)?;
    debug_assert_eq!(&s.meta, meta);
    Ok(s)
}

/// Bicubic upscale of every LR frame to `h × w`: the baseline output and the
/// decoder-side view of the model input.
pub fn upscale_triplet(lr: ArrayView3<f32>, h: usize, w: usize) -> Result<Array3<f32>, HarnessError> {
    let frames: Vec<_> = lr.outer_iter().map(|f| resize_bicubic_to(f, h, w)).collect::<Result<_, _>>()?;
    let views: Vec<_> = frames.iter().map(|f| f.view().insert_axis(Axis(0))).collect();
    Ok(concatenate(Axis(0), &views).expect("same size"))
}

/// Encode `[N·3, H, W]` frames into `N` stacked latents `[N, 3C, h, w]`.
pub fn encode_stacks(ae: &VqAutoencoder, frames: ArrayView3<f32>) -> Result<Array4<f32>, HarnessError> {
    let n3 = frames.len_of(Axis(0));
    if !n3.is_multiple_of(3) {
        return Err(HarnessError::Config(format!("{n3} frames do not form triplets")));
    }
    let z = ae.encode_frames(frames)?;
    let (_, c, h, w) = z.dim();
    Ok(z.into_shape_with_order((n3 / 3, 3 * c, h, w)).expect("contiguous"))
}

/// Decode stacked latents `[N, 3C, h, w]` to `[N·3, H, W]` frames.
pub fn decode_stacks(ae: &VqAutoencoder, z: &Array4<f32>) -> Result<Array3<f32>, HarnessError> {
    let (n, c3, h, w) = z.dim();
    let c = ae.config.latent_channels;
    if c3 != 3 * c {
        return Err(HarnessError::Config(format!("stack has {c3} channels, expected {}", 3 * c)));
    }
    let per_frame = z.as_standard_layout().into_owned().into_shape_with_order((n * 3, c, h, w)).expect("contiguous");
    Ok(ae.decode_latents(per_frame.view())?)
}

/// Stacked latents of the GT triplets (`x0`) and of the upscaled LR triplets (`y`).
pub fn encode_samples(ae: &VqAutoencoder, samples: &[TrainingSample]) -> Result<(Array4<f32>, Array4<f32>), HarnessError> {
    let first = samples.first().ok_or(HarnessError::EmptyEvalSet)?;
    let (_, h, w) = first.gt_triplet.dim();
    let gt: Vec<_> = samples.iter().map(|s| s.gt_triplet.view()).collect();
    let up: Vec<Array3<f32>> = samples.iter().map(|s| upscale_triplet(s.lr_triplet.view(), h, w)).collect::<Result<_, _>>()?;
    let upv: Vec<_> = up.iter().map(|u| u.view()).collect();
    let x0 = encode_stacks(ae, concatenate(Axis(0), &gt).expect("same size").view())?;
    let y = encode_stacks(ae, concatenate(Axis(0), &upv).expect("same size").view())?;
    Ok((x0, y))
}

/// Frame `i` (0..3) of a decoded triplet block.
pub(crate) fn triplet_frame(frames: &Array3<f32>, sample: usize, i: usize) -> ndarray::ArrayView2<'_, f32> {
    frames.slice(s![sample * 3 + i, .., ..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::AutoencoderConfig;
    use crate::data::{synth_phantom_clip, PhantomConfig};
    use crate::spatial::{degrade_bicubic, DegradationConfig};

    fn toy_cfg(realistic: bool) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::toy();
        if !realistic {
            cfg.degradation = DegradationConfig::bicubic_only(4);
        }
        cfg
    }

    #[test]
    fn shapes_for_k8() {
        let cfg = toy_cfg(false);
        let clip = synth_phantom_clip(&PhantomConfig { size: 64, ..Default::default() }, 30, 3).unwrap();
        let s = assemble_training_sample(&clip, &cfg, 9).unwrap();
        assert_eq!(s.lr_triplet.dim(), (3, 16, 16));
        assert_eq!(s.gt_triplet.dim(), (3, 64, 64));
        let idx = s.meta.triplet_offsets.map(|o| s.meta.start_index + o);
        for (i, &t) in idx.iter().enumerate() {
            assert_eq!(s.gt_triplet.index_axis(Axis(0), i), clip.frame(t));
        }
    }

    #[test]
    fn static_scene_lr_is_bicubic_of_gt() {
        let cfg = toy_cfg(false);
        let pc = PhantomConfig { size: 64, contraction_amplitude: 0.0, noise_level: 0.0, ..Default::default() };
        let clip = synth_phantom_clip(&pc, 30, 1).unwrap();
        let s = assemble_training_sample(&clip, &cfg, 4).unwrap();
        let want = degrade_bicubic(s.gt_triplet.view(), 4).unwrap();
        let err = s.lr_triplet.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn deterministic_and_regenerable() {
        let cfg = toy_cfg(true);
        let clip = synth_phantom_clip(&PhantomConfig { size: 64, ..Default::default() }, 30, 2).unwrap();
        for i in 0..5 {
            let a = assemble_training_sample(&clip, &cfg, sample_seed(7, i)).unwrap();
            let b = regenerate_sample(&a.meta, &clip, &cfg).unwrap();
            assert_eq!(a, b);
        }
        let other = synth_phantom_clip(&PhantomConfig { size: 64, ..Default::default() }, 30, 5).unwrap();
        let a = assemble_training_sample(&clip, &cfg, 1).unwrap();
        assert!(regenerate_sample(&a.meta, &other, &cfg).is_err());
    }

    #[test]
    fn stacks_round_trip_through_the_autoencoder_layout() {
        let ae = VqAutoencoder::new(AutoencoderConfig { base_channels: 4, mid_channels: 4, n_codes: 8, ..Default::default() }).unwrap();
        let frames = Array3::from_shape_fn((6, 16, 16), |(t, y, x)| ((t + y + x) % 5) as f32 / 5.0);
        let z = encode_stacks(&ae, frames.view()).unwrap();
        assert_eq!(z.dim(), (2, 9, 4, 4));
        let per = ae.encode_frames(frames.view()).unwrap();
        assert_eq!(z.slice(s![1, 3..6, .., ..]), per.slice(s![4, .., .., ..]));
        let dec = decode_stacks(&ae, &z).unwrap();
        assert_eq!(dec, ae.reconstruct(frames.view()).unwrap());
    }
}
