use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::jpeg::jpeg_round_trip;
use super::kernels::{filter2d, filter_separable, gaussian_taps, sinc_kernel};
use super::resize::resize_bicubic_to;
use super::{DegradationMode, SpatialError};

/// Probabilities and ranges for one `blur → resize → noise → JPEG` pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub blur_prob: f64,
    pub blur_sigma_range: [f64; 2],
    pub resize_prob: f64,
    /// Probabilities of choosing up / down / keep when a resize happens.
    pub resize_mode_probs: [f64; 3],
    pub resize_up_range: [f64; 2],
    pub resize_down_range: [f64; 2],
    pub noise_prob: f64,
    /// Gaussian noise std in `[0, 1]` intensity units.
    pub noise_sigma_range: [f64; 2],
    pub jpeg_prob: f64,
    pub jpeg_quality_range: [u8; 2],
}

impl StageConfig {
    pub fn first_order() -> Self {
        Self {
            blur_prob: 1.0,
            blur_sigma_range: [0.2, 3.0],
            resize_prob: 1.0,
            resize_mode_probs: [0.2, 0.7, 0.1],
            resize_up_range: [1.0, 1.5],
            resize_down_range: [0.15, 1.0],
            noise_prob: 1.0,
            noise_sigma_range: [0.0, 0.06],
            jpeg_prob: 1.0,
            jpeg_quality_range: [30, 95],
        }
    }

    pub fn second_order() -> Self {
        Self {
            blur_prob: 0.8,
            blur_sigma_range: [0.2, 1.5],
            resize_prob: 1.0,
            resize_mode_probs: [0.3, 0.4, 0.3],
            resize_up_range: [1.0, 1.2],
            resize_down_range: [0.3, 1.0],
            noise_prob: 1.0,
            noise_sigma_range: [0.0, 0.05],
            jpeg_prob: 1.0,
            jpeg_quality_range: [30, 95],
        }
    }

    /// Every stage disabled.
    pub fn disabled() -> Self {
        Self { blur_prob: 0.0, resize_prob: 0.0, noise_prob: 0.0, jpeg_prob: 0.0, ..Self::first_order() }
    }

    fn validate(&self, which: &str) -> Result<(), SpatialError> {
        let bad = |msg: String| Err(SpatialError::InvalidConfig(format!("{which} stage: {msg}")));
        for (name, p) in [
            ("blur_prob", self.blur_prob),
            ("resize_prob", self.resize_prob),
            ("noise_prob", self.noise_prob),
            ("jpeg_prob", self.jpeg_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.resize_mode_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("resize_mode_probs must be probabilities".into());
        }
        if self.resize_prob > 0.0 && self.resize_mode_probs.iter().sum::<f64>() <= 0.0 {
            return bad("resize_mode_probs sum to zero".into());
        }
        for (name, [lo, hi]) in [
            ("blur_sigma_range", self.blur_sigma_range),
            ("resize_up_range", self.resize_up_range),
            ("resize_down_range", self.resize_down_range),
            ("noise_sigma_range", self.noise_sigma_range),
        ] {
            if !(lo <= hi) || lo < 0.0 {
                return bad(format!("{name} [{lo}, {hi}] is not a valid range"));
            }
        }
        if self.blur_sigma_range[0] <= 0.0 && self.blur_prob > 0.0 {
            return bad("blur sigma must be positive".into());
        }
        if self.resize_down_range[0] <= 0.0 {
            return bad("resize_down_range must be positive".into());
        }
        let [qlo, qhi] = self.jpeg_quality_range;
        if qlo > qhi || qlo == 0 || qhi > 100 {
            return bad(format!("jpeg_quality_range [{qlo}, {qhi}] must lie in 1..=100"));
        }
        Ok(())
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        Self::first_order()
    }
}

/// Spatial degradation settings, shared by both modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationConfig {
    pub mode: DegradationMode,
    pub scale: u32,
    pub blur_kernel_sizes: Vec<usize>,
    pub first: StageConfig,
    pub second: StageConfig,
    pub second_order: bool,
    pub final_sinc_prob: f64,
    pub sinc_kernel_sizes: Vec<usize>,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self::realistic(4)
    }
}

impl DegradationConfig {
    pub fn realistic(scale: u32) -> Self {
        Self {
            mode: DegradationMode::Realistic,
            scale,
            blur_kernel_sizes: (7..=21).step_by(2).collect(),
            first: StageConfig::first_order(),
            second: StageConfig::second_order(),
            second_order: true,
            final_sinc_prob: 0.8,
            sinc_kernel_sizes: (7..=21).step_by(2).collect(),
        }
    }

    pub fn bicubic_only(scale: u32) -> Self {
        Self { mode: DegradationMode::BicubicOnly, ..Self::realistic(scale) }
    }

    pub fn validate(&self) -> Result<(), SpatialError> {
        if self.scale < 1 {
            return Err(SpatialError::InvalidScale("scale must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.final_sinc_prob) {
            return Err(SpatialError::InvalidConfig("final_sinc_prob is not a probability".into()));
        }
        for (name, sizes) in [("blur_kernel_sizes", &self.blur_kernel_sizes), ("sinc_kernel_sizes", &self.sinc_kernel_sizes)] {
            if sizes.is_empty() || sizes.iter().any(|k| k % 2 == 0) {
                return Err(SpatialError::InvalidConfig(format!("{name} must be a non-empty set of odd sizes")));
            }
        }
        self.first.validate("first")?;
        self.second.validate("second")
    }
}

#[derive(Debug, Clone, PartialEq)]
struct StageDraw {
    blur: Option<(usize, f64)>,
    resize_to: Option<(usize, usize)>,
    noise: Option<(f64, u64)>,
    jpeg: Option<u8>,
}

/// Every random choice for one training sample, drawn once and then applied
/// identically to each frame of the triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationPlan {
    stages: Vec<StageDraw>,
    target: (usize, usize),
    final_sinc: Option<(usize, f64)>,
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn hit(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

impl DegradationPlan {
    pub fn draw(config: &DegradationConfig, input: (usize, usize), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = config.scale as usize;
        let target = (input.0 / scale, input.1 / scale);
        let mut stages = Vec::new();
        let mut current = input;
        let passes: &[(&StageConfig, bool)] = if config.second_order {
            &[(&config.first, false), (&config.second, true)]
        } else {
            &[(&config.first, false)]
        };
        for &(stage, relative_to_target) in passes {
            let blur = hit(&mut rng, stage.blur_prob).then(|| {
                let k = config.blur_kernel_sizes[rng.random_range(0..config.blur_kernel_sizes.len())];
                (k, uniform(&mut rng, stage.blur_sigma_range))
            });
            let resize_to = if hit(&mut rng, stage.resize_prob) {
                let [up, down, keep] = stage.resize_mode_probs;
                let r = rng.random::<f64>() * (up + down + keep);
                let factor = if r < up {
                    uniform(&mut rng, stage.resize_up_range)
                } else if r < up + down {
                    uniform(&mut rng, stage.resize_down_range)
                } else {
                    1.0
                };
                let base = if relative_to_target { target } else { current };
                let size = (
                    ((base.0 as f64 * factor).round() as usize).max(1),
                    ((base.1 as f64 * factor).round() as usize).max(1),
                );
                Some(size)
            } else {
                None
            };
            if let Some(s) = resize_to {
                current = s;
            }
            let noise = hit(&mut rng, stage.noise_prob)
                .then(|| (uniform(&mut rng, stage.noise_sigma_range), rng.next_u64()));
            let jpeg = hit(&mut rng, stage.jpeg_prob).then(|| {
                let [lo, hi] = stage.jpeg_quality_range;
                rng.random_range(lo..=hi)
            });
            stages.push(StageDraw { blur, resize_to, noise, jpeg });
        }
        let final_sinc = hit(&mut rng, config.final_sinc_prob).then(|| {
            let k = config.sinc_kernel_sizes[rng.random_range(0..config.sinc_kernel_sizes.len())];
            (k, rng.random_range(PI / 3.0..=PI))
        });
        Self { stages, target, final_sinc }
    }

    pub fn apply(&self, frame: ArrayView2<f32>) -> Result<Array2<f32>, SpatialError> {
        let mut img = frame.to_owned();
        for s in &self.stages {
            if let Some((k, sigma)) = s.blur {
                img = filter_separable(img.view(), &gaussian_taps(k, sigma));
            }
            if let Some((h, w)) = s.resize_to {
                img = resize_bicubic_to(img.view(), h, w)?;
            }
            if let Some((sigma, seed)) = s.noise {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                img.mapv_inplace(|v| {
                    let n: f64 = rng.sample(StandardNormal);
                    (v as f64 + sigma * n).clamp(0.0, 1.0) as f32
                });
            }
            if let Some(q) = s.jpeg {
                img = jpeg_round_trip(img.view(), q)?;
            }
        }
        img = resize_bicubic_to(img.view(), self.target.0, self.target.1)?;
        if let Some((k, omega)) = self.final_sinc {
            img = filter2d(img.view(), sinc_kernel(k, omega).view());
        }
        Ok(img.mapv_into(|v| v.clamp(0.0, 1.0)))
    }
}

pub(super) fn degrade_stack(
    frames: ArrayView3<f32>,
    config: &DegradationConfig,
    seed: u64,
) -> Result<Array3<f32>, SpatialError> {
    let (_, h, w) = frames.dim();
    let plan = DegradationPlan::draw(config, (h, w), seed);
    let outs = frames
        .axis_iter(Axis(0))
        .map(|f| plan.apply(f))
        .collect::<Result<Vec<_>, _>>()?;
    let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
    Ok(ndarray::stack(Axis(0), &views).expect("frames share the plan's target size"))
}
