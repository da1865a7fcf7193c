//! Spatial ×s degradation of frame triplets: a bicubic-only path and a
//! randomised two-pass "real-world" path (blur, resize, noise, JPEG, final
//! sinc), plus the bicubic resampler shared with the rest of the crate.

mod degrade;
pub mod jpeg;
pub mod kernels;
pub mod resize;

use ndarray::{Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use degrade::{DegradationConfig, DegradationPlan, StageConfig};
pub use resize::{bicubic_resize, resize_bicubic_to};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("invalid scale: {0}")]
    InvalidScale(String),
    #[error("degradation config mode is {found:?}, operation requires {expected:?}")]
    ConfigModeMismatch { expected: DegradationMode, found: DegradationMode },
    #[error("invalid degradation config: {0}")]
    InvalidConfig(String),
    #[error("jpeg stage failed: {0}")]
    Jpeg(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationMode {
    Realistic,
    BicubicOnly,
}

fn check_divisible(frames: &ArrayView3<f32>, scale: u32) -> Result<(), SpatialError> {
    let (_, h, w) = frames.dim();
    let s = scale as usize;
    if s == 0 || h % s != 0 || w % s != 0 || h == 0 || w == 0 {
        return Err(SpatialError::InvalidScale(format!("{h}x{w} frames are not divisible by scale {scale}")));
    }
    Ok(())
}

/// Bicubic ×`scale` downsampling of every frame in `[N, H, W]`.
pub fn degrade_bicubic(frames: ArrayView3<f32>, scale: u32) -> Result<Array3<f32>, SpatialError> {
    check_divisible(&frames, scale)?;
    let (n, h, w) = frames.dim();
    let s = scale as usize;
    let mut out = Array3::zeros((n, h / s, w / s));
    for (i, f) in frames.axis_iter(Axis(0)).enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&bicubic_resize(f, 1.0 / scale as f64)?);
    }
    Ok(out)
}

/// Randomised degradation with one shared draw of every random choice.
pub fn degrade_realistic(
    frames: ArrayView3<f32>,
    config: &DegradationConfig,
    rng_seed: u64,
) -> Result<Array3<f32>, SpatialError> {
    if config.mode != DegradationMode::Realistic {
        return Err(SpatialError::ConfigModeMismatch { expected: DegradationMode::Realistic, found: config.mode });
    }
    config.validate()?;
    check_divisible(&frames, config.scale)?;
    degrade::degrade_stack(frames, config, rng_seed)
}

/// Dispatch on `config.mode`.
pub fn degrade(frames: ArrayView3<f32>, config: &DegradationConfig, rng_seed: u64) -> Result<Array3<f32>, SpatialError> {
    match config.mode {
        DegradationMode::BicubicOnly => degrade_bicubic(frames, config.scale),
        DegradationMode::Realistic => degrade_realistic(frames, config, rng_seed),
    }
}
