//! Temporal low-resolution signal: dense flow between window endpoints,
//! flow-warped interior frames, and training-window sampling.

mod flow;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use flow::{estimate_flow, FlowField, FlowParams};

use crate::data::CineClip;

pub const DEFAULT_K: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("clip has {frames} frames, a window with gap {k} needs {needed}")]
    ClipTooShort { frames: usize, k: usize, needed: usize },
    #[error("invalid temporal parameters: {0}")]
    InvalidParams(String),
}

/// Backward warp `out(p) = frame(p + scale·flow(p))`, bilinear with border
/// replication.
pub fn warp_image(frame: ArrayView2<f32>, flow: &FlowField, scale: f64) -> Result<Array2<f32>, TemporalError> {
    if flow.shape() != frame.dim() {
        return Err(TemporalError::ShapeMismatch { expected: frame.dim(), found: flow.shape() });
    }
    let (h, w) = frame.dim();
    if scale == 0.0 {
        return Ok(frame.to_owned());
    }
    let (maxy, maxx) = ((h - 1) as f64, (w - 1) as f64);
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let sx = (x as f64 + scale * flow.dx(y, x) as f64).clamp(0.0, maxx);
        let sy = (y as f64 + scale * flow.dy(y, x) as f64).clamp(0.0, maxy);
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (tx, ty) = (sx - x0 as f64, sy - y0 as f64);
        let top = (1.0 - tx) * frame[[y0, x0]] as f64 + tx * frame[[y0, x1]] as f64;
        let bot = (1.0 - tx) * frame[[y1, x0]] as f64 + tx * frame[[y1, x1]] as f64;
        ((1.0 - ty) * top + ty * bot) as f32
    }))
}

/// Forward and backward flow between two endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFlow {
    pub a_to_b: FlowField,
    pub b_to_a: FlowField,
}

impl PairFlow {
    pub fn estimate(a: ArrayView2<f32>, b: ArrayView2<f32>, params: &FlowParams) -> Result<Self, TemporalError> {
        Ok(Self { a_to_b: estimate_flow(a, b, params)?, b_to_a: estimate_flow(b, a, params)? })
    }

    /// Blend of both endpoints carried to time `tau ∈ [0, 1]`.
    ///
    /// Content at `q` at time `tau` sits at `q + tau·F_ba(q)` in `a` and at
    /// `q + (1 − tau)·F_ab(q)` in `b`, so each endpoint is warped with the
    /// flow that points back into it.
    pub fn frame_at(&self, a: ArrayView2<f32>, b: ArrayView2<f32>, tau: f64) -> Result<Array2<f32>, TemporalError> {
        let from_a = warp_image(a, &self.b_to_a, tau)?;
        let from_b = warp_image(b, &self.a_to_b, 1.0 - tau)?;
        Ok(ndarray::Zip::from(&from_a)
            .and(&from_b)
            .map_collect(|&pa, &pb| (((1.0 - tau) * pa as f64 + tau * pb as f64) as f32).clamp(0.0, 1.0)))
    }
}

/// Interior frames at `tau = k/K`, `k = 1..K−1`, stacked as `[K−1, H, W]`.
pub fn interpolate_pair(
    endpoint_a: ArrayView2<f32>,
    endpoint_b: ArrayView2<f32>,
    k: usize,
    params: &FlowParams,
) -> Result<Array3<f32>, TemporalError> {
    if k < 2 {
        return Err(TemporalError::InvalidParams(format!("gap K = {k} leaves no interior frames")));
    }
    let flows = PairFlow::estimate(endpoint_a, endpoint_b, params)?;
    interpolate_with(&flows, endpoint_a, endpoint_b, k)
}

fn interpolate_with(flows: &PairFlow, a: ArrayView2<f32>, b: ArrayView2<f32>, k: usize) -> Result<Array3<f32>, TemporalError> {
    let (h, w) = a.dim();
    let mut out = Array3::zeros((k - 1, h, w));
    for i in 1..k {
        let frame = flows.frame_at(a, b, i as f64 / k as f64)?;
        out.index_axis_mut(Axis(0), i - 1).assign(&frame);
    }
    Ok(out)
}

/// A `K+1`-frame mini-clip with its interpolated interior and the chosen
/// ground-truth triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub start_index: usize,
    pub k: usize,
    pub endpoint_a: Array2<f32>,
    pub endpoint_b: Array2<f32>,
    /// `[K−1, H, W]`; row `i` is window position `i + 1`.
    pub interpolated: Array3<f32>,
    /// Window-relative positions, three consecutive values in `1..K`.
    pub triplet_offsets: [usize; 3],
    /// Original clip frames at `start_index + triplet_offsets`.
    pub gt_frames: Array3<f32>,
}

impl TrainingWindow {
    /// Interpolated frames at the triplet positions, `[3, H, W]`.
    pub fn interpolated_triplet(&self) -> Array3<f32> {
        self.interpolated.slice(ndarray::s![self.triplet_offsets[0] - 1..self.triplet_offsets[2], .., ..]).to_owned()
    }

    /// Absolute clip indices of the triplet.
    pub fn absolute_indices(&self) -> [usize; 3] {
        self.triplet_offsets.map(|o| self.start_index + o)
    }
}

/// Draw `(start_index, triplet_start)` for a clip of `frames` frames.
pub fn draw_window(frames: usize, k: usize, rng_seed: u64) -> Result<(usize, usize), TemporalError> {
    if k < 4 {
        return Err(TemporalError::InvalidParams(format!("gap K = {k} has fewer than 3 interior frames")));
    }
    if frames < k + 1 {
        return Err(TemporalError::ClipTooShort { frames, k, needed: k + 1 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    // Upper bound T−K−1 keeps one frame of slack past the window end.
    let start = rng.random_range(0..=frames.saturating_sub(k + 1));
    let triplet = rng.random_range(1..=k - 3);
    Ok((start, triplet))
}

pub fn sample_training_window(clip: &CineClip, k: usize, rng_seed: u64, params: &FlowParams) -> Result<TrainingWindow, TemporalError> {
    params.validate()?;
    let (start_index, first) = draw_window(clip.len(), k, rng_seed)?;
    let a = clip.frame(start_index);
    let b = clip.frame(start_index + k);
    let interpolated = interpolate_pair(a, b, k, params)?;
    let triplet_offsets = [first, first + 1, first + 2];
    let gt_frames = clip
        .frames
        .slice(ndarray::s![start_index + first..start_index + first + 3, .., ..])
        .to_owned();
    Ok(TrainingWindow {
        start_index,
        k,
        endpoint_a: a.to_owned(),
        endpoint_b: b.to_owned(),
        interpolated,
        triplet_offsets,
        gt_frames,
    })
}
