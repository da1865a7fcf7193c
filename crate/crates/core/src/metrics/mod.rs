//! Full-reference quality metrics on `[H, W]` frames in `[0, 1]`.
//!
//! PSNR uses peak 1.0. SSIM is single-scale with an 11×11 Gaussian window
//! (σ = 1.5), averaged over valid window positions only. LPIPS runs a
//! pluggable convolutional backbone, see [`lpips`].

pub mod lpips;

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lpips::{Lpips, LpipsLayer};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: reference {reference:?}, test {test:?}")]
    ShapeMismatch { reference: (usize, usize), test: (usize, usize) },
    #[error("image {found:?} is smaller than the {min}×{min} SSIM window")]
    TooSmall { found: (usize, usize), min: usize },
    #[error("LPIPS backbone unavailable: {0}")]
    BackboneUnavailable(String),
    #[error("invalid LPIPS backbone: {0}")]
    InvalidBackbone(String),
    #[error("cannot aggregate an empty set of images")]
    Empty,
}

/// Returned by [`psnr`] for identical inputs.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_shape(a: ArrayView2<f32>, b: ArrayView2<f32>) -> Result<(usize, usize), MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::ShapeMismatch { reference: a.dim(), test: b.dim() });
    }
    Ok(a.dim())
}

pub fn mse(reference: ArrayView2<f32>, test: ArrayView2<f32>) -> Result<f64, MetricError> {
    let (h, w) = same_shape(reference, test)?;
    let sum: f64 = reference.iter().zip(test.iter()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    Ok(sum / (h * w).max(1) as f64)
}

/// `10·log10(1 / MSE)`; [`PSNR_IDENTICAL`] when the MSE is zero.
pub fn psnr(reference: ArrayView2<f32>, test: ArrayView2<f32>) -> Result<f64, MetricError> {
    let m = mse(reference, test)?;
    if m == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(10.0 * (1.0 / m).log10())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let taps: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable "valid" filtering: output is `(H − 10) × (W − 10)`.
fn filter_valid(x: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let rows: Array2<f64> = Array2::from_shape_fn((h, ow), |(y, xo)| (0..k).map(|i| taps[i] * x[[y, xo + i]]).sum::<f64>());
    Array2::from_shape_fn((oh, ow), |(yo, xo)| (0..k).map(|i| taps[i] * rows[[yo + i, xo]]).sum::<f64>())
}

pub fn ssim(reference: ArrayView2<f32>, test: ArrayView2<f32>) -> Result<f64, MetricError> {
    let (h, w) = same_shape(reference, test)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmall { found: (h, w), min: SSIM_WINDOW });
    }
    let taps = gaussian_window();
    let a = reference.mapv(|v| v as f64);
    let b = test.mapv(|v| v as f64);
    let mu_a = filter_valid(&a, &taps);
    let mu_b = filter_valid(&b, &taps);
    let e_aa = filter_valid(&(&a * &a), &taps);
    let e_bb = filter_valid(&(&b * &b), &taps);
    let e_ab = filter_valid(&(&a * &b), &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for ((((&ma, &mb), &aa), &bb), &ab) in mu_a.iter().zip(mu_b.iter()).zip(e_aa.iter()).zip(e_bb.iter()).zip(e_ab.iter()) {
        let va = aa - ma * ma;
        let vb = bb - mb * mb;
        let cov = ab - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

/// Scores of one model on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub psnr_db: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
    pub latent_l1: Option<f64>,
}

pub fn score_frame(reference: ArrayView2<f32>, test: ArrayView2<f32>, lpips: Option<&Lpips>) -> Result<FrameScores, MetricError> {
    Ok(FrameScores {
        psnr_db: psnr(reference, test)?,
        ssim: ssim(reference, test)?,
        lpips: lpips.map(|l| l.distance(reference, test)).transpose()?,
        latent_l1: None,
    })
}

/// One row of a report: mean scores of one model over `n_images` frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub model: String,
    pub psnr_db: f64,
    pub ssim: f64,
    /// Absent when no backbone was loaded.
    pub lpips: Option<f64>,
    /// Mean L1 distance to the reference in autoencoder latent space.
    pub latent_l1: Option<f64>,
    pub n_images: usize,
}

/// Running arithmetic means. An optional score is reported only if every
/// pushed frame carried it.
#[derive(Debug, Clone)]
pub struct ScoreAccumulator {
    model: String,
    frames: Vec<FrameScores>,
}

impl ScoreAccumulator {
    pub fn new(model: impl Into<String>) -> Self {
        Self { model: model.into(), frames: Vec::new() }
    }

    pub fn push(&mut self, s: FrameScores) {
        self.frames.push(s);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn finish(&self) -> Result<ModelScores, MetricError> {
        let n = self.frames.len();
        if n == 0 {
            return Err(MetricError::Empty);
        }
        let mean = |f: &dyn Fn(&FrameScores) -> f64| self.frames.iter().map(f).sum::<f64>() / n as f64;
        let mean_opt = |f: &dyn Fn(&FrameScores) -> Option<f64>| {
            let v: Option<Vec<f64>> = self.frames.iter().map(f).collect();
            v.map(|v| v.iter().sum::<f64>() / n as f64)
        };
        Ok(ModelScores {
            model: self.model.clone(),
            psnr_db: mean(&|s| s.psnr_db),
            ssim: mean(&|s| s.ssim),
            lpips: mean_opt(&|s| s.lpips),
            latent_l1: mean_opt(&|s| s.latent_l1),
            n_images: n,
        })
    }
}

/// Rows are models, columns PSNR / SSIM / LPIPS (plus the latent proxy).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<ModelScores>,
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

impl MetricReport {
    pub fn row(&self, model: &str) -> Option<&ModelScores> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Fixed-width table, one line per model.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>9} {:>8} {:>8} {:>10} {:>6}", "model", "PSNR", "SSIM", "LPIPS", "latent_L1", "n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<12} {:>9.4} {:>8.4} {:>8} {:>10} {:>6}",
                r.model,
                r.psnr_db,
                r.ssim,
                fmt_opt(r.lpips, 4),
                fmt_opt(r.latent_l1, 5),
                r.n_images
            );
        }
        out
    }

    /// `model.metric = value` lines; absent metrics are written as `absent`.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let m = &r.model;
            let _ = writeln!(out, "{m}.psnr_db = {:.6}", r.psnr_db);
            let _ = writeln!(out, "{m}.ssim = {:.6}", r.ssim);
            let _ = writeln!(out, "{m}.lpips = {}", r.lpips.map_or("absent".into(), |v| format!("{v:.6}")));
            let _ = writeln!(out, "{m}.latent_l1 = {}", r.latent_l1.map_or("absent".into(), |v| format!("{v:.6}")));
            let _ = writeln!(out, "{m}.n_images = {}", r.n_images);
        }
        out
    }
}
