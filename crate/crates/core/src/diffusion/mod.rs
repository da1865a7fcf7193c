//! Residual-shifting diffusion over stacked autoencoder latents.
//!
//! Latent stacks are `[B, C, h, w]` with `C = 3 · latent_channels`: the three
//! frame latents concatenated along channels. `y` is the encoded,
//! bicubic-upscaled LR stack that the forward process shifts towards, and in
//! this pipeline it doubles as the conditioning input.

pub mod fixtures;
mod process;
mod schedule;
mod train;
mod unet;

use ndarray::{Array4, ArrayView4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use process::{forward_sample, forward_sample_batch, posterior_coefficients, posterior_step};
pub use schedule::{DiffusionSchedule, ScheduleConfig};
pub use train::{training_loss, DenoiserTrainer, DiffusionTrainConfig, DiffusionTrainRecord, LatentPairs};
pub use unet::{step_embedding, UNet, UNetConfig, CHECKPOINT_KIND};

use crate::nn::CheckpointError;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule parameters: {0}")]
    InvalidScheduleParams(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// `f_θ(x_t, cond, t) → x̂0` on `[B, C, h, w]` stacks.
pub trait Denoiser {
    fn predict(&self, x_t: ArrayView4<f32>, cond: ArrayView4<f32>, t: usize) -> Result<Array4<f32>, DiffusionError>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict(&self, x_t: ArrayView4<f32>, cond: ArrayView4<f32>, t: usize) -> Result<Array4<f32>, DiffusionError> {
        (**self).predict(x_t, cond, t)
    }
}

/// Normalised reverse-process times at which the trajectory is recorded.
pub const TRAJECTORY_PROGRESS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Step index whose state represents normalised progress `p`: `round(T − p T)`.
/// Progress 0 is `x_T`, progress 1 the final output.
pub fn trajectory_step(steps: usize, p: f64) -> usize {
    (steps as f64 - p * steps as f64).round() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySnapshot {
    pub progress: f64,
    /// State index: `x_t` for `t ≥ 1`, the output for `t = 0`.
    pub t: usize,
    pub state: Array4<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub x0: Array4<f32>,
    /// Present when requested, one snapshot per [`TRAJECTORY_PROGRESS`] entry.
    pub trajectory: Option<Vec<TrajectorySnapshot>>,
}

fn gaussian(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f32> {
    Array4::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
}

/// Reverse process from `x_T = y + κ √η_T ε`, one denoiser call per step.
pub fn sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    y: ArrayView4<f32>,
    cond: ArrayView4<f32>,
    schedule: &DiffusionSchedule,
    seed: u64,
    keep_trajectory: bool,
) -> Result<SampleOutput, DiffusionError> {
    if y.shape() != cond.shape() {
        return Err(DiffusionError::ShapeMismatch(format!("y {:?} vs cond {:?}", y.shape(), cond.shape())));
    }
    let big_t = schedule.steps();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = (schedule.kappa() * schedule.eta(big_t).sqrt()) as f32;
    let eps = gaussian(y.dim(), &mut rng);
    let mut x = &y + &(eps * sd);
    let wanted: Vec<(f64, usize)> = TRAJECTORY_PROGRESS.iter().map(|&p| (p, trajectory_step(big_t, p))).collect();
    let mut snaps = Vec::new();
    let record = |t: usize, x: &Array4<f32>, snaps: &mut Vec<TrajectorySnapshot>| {
        if keep_trajectory {
            for &(p, s) in wanted.iter().filter(|(_, s)| *s == t) {
                snaps.push(TrajectorySnapshot { progress: p, t: s, state: x.clone() });
            }
        }
    };
    record(big_t, &x, &mut snaps);
    for t in (1..=big_t).rev() {
        let x0_hat = denoiser.predict(x.view(), cond, t)?;
        if x0_hat.shape() != x.shape() {
            return Err(DiffusionError::ShapeMismatch(format!("denoiser returned {:?} for {:?}", x0_hat.shape(), x.shape())));
        }
        x = if t == 1 {
            x0_hat
        } else {
            let noise = gaussian(x.dim(), &mut rng);
            posterior_step(x.view(), x0_hat.view(), t, schedule, noise.view())?
        };
        record(t - 1, &x, &mut snaps);
    }
    Ok(SampleOutput { x0: x, trajectory: keep_trajectory.then_some(snaps) })
}

#[cfg(test)]
mod tests {
    use super::fixtures::{ConstantDenoiser, CountingDenoiser};
    use super::*;
    use ndarray::Array4;

    fn stack(seed: u64) -> Array4<f32> {
        Array4::from_shape_fn((1, 9, 4, 4), |(_, c, y, x)| ((c * 31 + y * 7 + x * 3 + seed as usize) % 17) as f32 / 17.0 - 0.5)
    }

    #[test]
    fn exactly_t_denoiser_calls() {
        let s = ScheduleConfig::default().build().unwrap();
        let (x0, y) = (stack(0), stack(5));
        let d = CountingDenoiser::new(ConstantDenoiser::new(x0.clone()));
        sample(&d, y.view(), y.view(), &s, 0, false).unwrap();
        assert_eq!(d.calls(), 15);
        assert_eq!(d.steps_seen(), (1..=15).rev().collect::<Vec<_>>());
    }

    #[test]
    fn oracle_with_tiny_kappa_recovers_x0() {
        let s = ScheduleConfig { kappa: 1e-4, ..Default::default() }.build().unwrap();
        let (x0, y) = (stack(1), stack(9));
        let out = sample(&ConstantDenoiser::new(x0.clone()), y.view(), y.view(), &s, 4, false).unwrap();
        let err = out.x0.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-2, "{err}");
    }

    #[test]
    fn identity_of_y_returns_y() {
        let s = ScheduleConfig { kappa: 1e-6, ..Default::default() }.build().unwrap();
        let y = stack(3);
        let out = sample(&ConstantDenoiser::new(y.clone()), y.view(), y.view(), &s, 0, false).unwrap();
        assert!(out.x0.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-5));
    }

    #[test]
    fn deterministic_given_seed_and_trajectory_layout() {
        let s = ScheduleConfig::default().build().unwrap();
        let (x0, y) = (stack(2), stack(4));
        let d = ConstantDenoiser::new(x0);
        let a = sample(&d, y.view(), y.view(), &s, 13, true).unwrap();
        let b = sample(&d, y.view(), y.view(), &s, 13, true).unwrap();
        let c = sample(&d, y.view(), y.view(), &s, 14, true).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.trajectory, c.trajectory);
        let traj = a.trajectory.unwrap();
        assert_eq!(traj.len(), 5);
        assert_eq!(traj.iter().map(|s| s.t).collect::<Vec<_>>(), vec![15, 11, 8, 4, 0]);
        assert_eq!(traj.iter().map(|s| s.progress).collect::<Vec<_>>(), TRAJECTORY_PROGRESS.to_vec());
        assert_eq!(traj[4].state, a.x0);
    }

    #[test]
    fn shape_errors_propagate() {
        let s = ScheduleConfig::default().build().unwrap();
        let y = stack(0);
        let bad = Array4::<f32>::zeros((1, 9, 2, 2));
        assert!(sample(&ConstantDenoiser::new(bad.clone()), y.view(), y.view(), &s, 0, false).is_err());
        assert!(sample(&ConstantDenoiser::new(y.clone()), y.view(), bad.view(), &s, 0, false).is_err());
    }
}
