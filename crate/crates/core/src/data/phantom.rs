//! Beating-ellipse phantom standing in for short-axis cardiac cine data.

use std::f64::consts::PI;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CineClip, IngestError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    /// Frames per cardiac cycle.
    pub period: usize,
    /// Blood-pool radius at end-diastole, as a fraction of the frame size.
    pub base_radius: f64,
    /// Relative radius reduction at end-systole.
    pub contraction_amplitude: f64,
    /// Std of additive Gaussian noise.
    pub noise_level: f64,
    /// Seeds the static background texture.
    pub texture_seed: u64,
    /// Output frame side length in pixels.
    pub size: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self { period: 30, base_radius: 0.2, contraction_amplitude: 0.3, noise_level: 0.0, texture_seed: 7, size: 256 }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::InvalidConfig(m.to_string()));
        if self.period < 2 {
            return bad("phantom period must be at least 2");
        }
        if !(0.0..1.0).contains(&self.contraction_amplitude) {
            return bad("contraction_amplitude must lie in [0, 1)");
        }
        if !(self.noise_level >= 0.0) {
            return bad("noise_level must be non-negative");
        }
        if !(self.base_radius > 0.0 && self.base_radius < 0.5) {
            return bad("base_radius must lie in (0, 0.5) of the frame size");
        }
        if self.size < 8 {
            return bad("phantom size must be at least 8 pixels");
        }
        Ok(())
    }
}

/// Random smooth field: a few low-frequency sinusoids.
struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng, count: usize, max_freq: f64) -> Self {
        let waves = (0..count)
            .map(|_| {
                let theta = rng.random_range(0.0..2.0 * PI);
                let f = rng.random_range(1.0..max_freq);
                (f * theta.cos(), f * theta.sin(), rng.random_range(0.0..2.0 * PI), rng.random_range(0.3..1.0))
            })
            .collect();
        Self { waves }
    }

    /// Value in roughly `[-1, 1]` at normalised coordinates.
    fn at(&self, u: f64, v: f64) -> f64 {
        let norm: f64 = self.waves.iter().map(|w| w.3).sum();
        self.waves.iter().map(|&(fx, fy, ph, a)| a * (2.0 * PI * (fx * u + fy * v) + ph).sin()).sum::<f64>() / norm
    }
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Render `t_frames` frames. Geometry jitter and noise come from `seed`, the
/// background texture from `config.texture_seed`.
pub fn synth_phantom_clip(config: &PhantomConfig, t_frames: usize, seed: u64) -> Result<CineClip, IngestError> {
    config.validate()?;
    if t_frames < 2 {
        return Err(IngestError::InvalidConfig("a phantom clip needs at least 2 frames".into()));
    }
    let mut tex_rng = ChaCha8Rng::seed_from_u64(config.texture_seed);
    let background = Texture::new(&mut tex_rng, 6, 4.0);
    let muscle = Texture::new(&mut tex_rng, 5, 6.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1ae);
    let cx = 0.5 + rng.random_range(-0.06..0.06);
    let cy = 0.5 + rng.random_range(-0.06..0.06);
    let aspect = rng.random_range(0.8..1.2);
    let tilt = rng.random_range(0.0..PI);
    let wall = rng.random_range(0.35..0.5);
    let pool_level = rng.random_range(0.75..0.9);
    let noise_seed: u64 = rng.random();

    let n = config.size;
    let edge = 1.5 / n as f64;
    let r0 = config.base_radius;
    let (ct, st) = (tilt.cos(), tilt.sin());
    let static_bg = ndarray::Array2::from_shape_fn((n, n), |(y, x)| {
        let (u, v) = ((x as f64 + 0.5) / n as f64, (y as f64 + 0.5) / n as f64);
        let falloff = 1.0 - 0.6 * ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
        (0.18 + 0.07 * background.at(u, v)) * falloff
    });

    let mut frames = Array3::<f32>::zeros((t_frames, n, n));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    for t in 0..t_frames {
        let phase = (t % config.period) as f64 / config.period as f64;
        let r = r0 * (1.0 - config.contraction_amplitude * 0.5 * (1.0 - (2.0 * PI * phase).cos()));
        // Myocardium keeps roughly constant area, so it thickens as the pool shrinks.
        let outer = (r * r + (r0 * (1.0 + wall)).powi(2) - r0 * r0).sqrt();
        let mut frame = frames.index_axis_mut(ndarray::Axis(0), t);
        for y in 0..n {
            for x in 0..n {
                let (u, v) = ((x as f64 + 0.5) / n as f64, (y as f64 + 0.5) / n as f64);
                let (du, dv) = (u - cx, v - cy);
                let (a, b) = (du * ct + dv * st, -du * st + dv * ct);
                let d = (a * a / aspect + b * b * aspect).sqrt();
                let inside_pool = 1.0 - smoothstep(r - edge, r + edge, d);
                let inside_wall = 1.0 - smoothstep(outer - edge, outer + edge, d);
                let pool = pool_level + 0.05 * muscle.at(u * 0.5, v * 0.5);
                let myo = 0.42 + 0.08 * muscle.at(u, v);
                let mut val = static_bg[[y, x]] * (1.0 - inside_wall)
                    + myo * (inside_wall - inside_pool)
                    + pool * inside_pool;
                if config.noise_level > 0.0 {
                    let z: f64 = noise_rng.sample(StandardNormal);
                    val += config.noise_level * z;
                }
                frame[[y, x]] = val.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(CineClip { patient_id: format!("phantom{seed}"), slice_id: "0".into(), frames })
}
