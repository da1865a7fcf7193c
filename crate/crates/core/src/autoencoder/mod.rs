//! Vector-quantised convolutional autoencoder (downsample factor 4) that
//! provides the frozen latent space for diffusion.

mod train;

use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4, Axis, Ix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use train::{stack_frames, train_autoencoder, validation_psnr, AeTrainConfig, AeTrainRecord, AeTrainReport};

use crate::nn::{Checkpoint, CheckpointError, Conv2d, Graph, ParamId, ParamStore, Var};

/// Spatial downsample factor of the encoder.
pub const DOWNSAMPLE: usize = 4;
pub const CHECKPOINT_KIND: &str = "vq_autoencoder";
const INFERENCE_CHUNK: usize = 16;

#[derive(Debug, Error)]
pub enum AutoencoderError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("latent has {found} channels, codebook has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid autoencoder config: {0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint does not match the architecture: {0}")]
    CheckpointMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    /// Channel width at full and half resolution.
    pub base_channels: usize,
    /// Channel width at quarter resolution.
    pub mid_channels: usize,
    pub latent_channels: usize,
    pub n_codes: usize,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self { base_channels: 12, mid_channels: 24, latent_channels: 3, n_codes: 512, seed: 0 }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<(), AutoencoderError> {
        if self.base_channels == 0 || self.mid_channels == 0 || self.latent_channels == 0 {
            return Err(AutoencoderError::Config("channel counts must be positive".into()));
        }
        if self.n_codes < 2 {
            return Err(AutoencoderError::Config("codebook needs at least two entries".into()));
        }
        Ok(())
    }
}

/// Code vectors `[N_codes, C_latent]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub entries: Array2<f32>,
}

impl Codebook {
    pub fn new(entries: Array2<f32>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.entries.ncols()
    }

    /// Index of the nearest entry; ties go to the lowest index.
    pub fn nearest(&self, v: &[f32]) -> usize {
        let mut best = (0, f32::INFINITY);
        for (i, row) in self.entries.outer_iter().enumerate() {
            let d: f32 = row.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// Pairs of entries closer than `tol` (Euclidean).
    pub fn duplicates(&self, tol: f32) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let n = self.len();
        for i in 0..n {
            for j in i + 1..n {
                let d: f32 = self.entries.row(i).iter().zip(self.entries.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                if d.sqrt() < tol {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Latent grid stored channel-first as `[C, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub values: Array3<f32>,
    pub quantized: bool,
    /// `[h, w]` code ids when quantized.
    pub indices: Option<Array2<usize>>,
}

impl LatentGrid {
    pub fn continuous(values: Array3<f32>) -> Self {
        Self { values, quantized: false, indices: None }
    }

    /// `(h, w, C)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        let (c, h, w) = self.values.dim();
        (h, w, c)
    }

    /// Values as `[h, w, C]`.
    pub fn to_hwc(&self) -> Array3<f32> {
        self.values.view().permuted_axes([1, 2, 0]).to_owned()
    }
}

/// Snap every grid vector to its nearest codebook entry.
pub fn quantize(latent: &LatentGrid, codebook: &Codebook) -> Result<LatentGrid, AutoencoderError> {
    let (c, h, w) = latent.values.dim();
    if c != codebook.dim() {
        return Err(AutoencoderError::DimensionMismatch { expected: codebook.dim(), found: c });
    }
    let mut values = Array3::zeros((c, h, w));
    let mut indices = Array2::zeros((h, w));
    let mut v = vec![0.0f32; c];
    for y in 0..h {
        for x in 0..w {
            for (ci, slot) in v.iter_mut().enumerate() {
                *slot = latent.values[[ci, y, x]];
            }
            let k = codebook.nearest(&v);
            indices[[y, x]] = k;
            for ci in 0..c {
                values[[ci, y, x]] = codebook.entries[[k, ci]];
            }
        }
    }
    Ok(LatentGrid { values, quantized: true, indices: Some(indices) })
}

/// Batched nearest-code lookup on `[B, C, h, w]`; indices laid out `[B, h, w]`.
fn nearest_codes(z: ArrayView4<f32>, codebook: &Codebook) -> Vec<usize> {
    let (b, c, h, w) = z.dim();
    let mut out = Vec::with_capacity(b * h * w);
    let mut v = vec![0.0f32; c];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                for (ci, slot) in v.iter_mut().enumerate() {
                    *slot = z[[bi, ci, y, x]];
                }
                out.push(codebook.nearest(&v));
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Encoder {
    conv_in: Conv2d,
    down1: Conv2d,
    res1: Conv2d,
    down2: Conv2d,
    res2: Conv2d,
    to_latent: Conv2d,
}

#[derive(Debug, Clone)]
struct Decoder {
    from_latent: Conv2d,
    res1: Conv2d,
    up1: Conv2d,
    narrow: Conv2d,
    up2: Conv2d,
    to_pixels: Conv2d,
}

/// The trainable model: encoder, decoder and codebook in one parameter store.
#[derive(Debug, Clone)]
pub struct VqAutoencoder {
    pub config: AutoencoderConfig,
    params: ParamStore<f32>,
    enc: Encoder,
    dec: Decoder,
    codebook: ParamId,
}

impl VqAutoencoder {
    pub fn new(config: AutoencoderConfig) -> Result<Self, AutoencoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamStore::new();
        let (c1, c2, cl) = (config.base_channels, config.mid_channels, config.latent_channels);
        let s2 = std::f64::consts::SQRT_2;
        let enc = Encoder {
            conv_in: Conv2d::new(&mut ps, "enc.conv_in", 1, c1, 3, 1, s2, &mut rng),
            down1: Conv2d::new(&mut ps, "enc.down1", c1, c2, 3, 2, s2, &mut rng),
            res1: Conv2d::new(&mut ps, "enc.res1", c2, c2, 3, 1, 0.5, &mut rng),
            down2: Conv2d::new(&mut ps, "enc.down2", c2, c2, 3, 2, s2, &mut rng),
            res2: Conv2d::new(&mut ps, "enc.res2", c2, c2, 3, 1, 0.5, &mut rng),
            to_latent: Conv2d::new(&mut ps, "enc.to_latent", c2, cl, 1, 1, 1.0, &mut rng),
        };
        let dec = Decoder {
            from_latent: Conv2d::new(&mut ps, "dec.from_latent", cl, c2, 3, 1, s2, &mut rng),
            res1: Conv2d::new(&mut ps, "dec.res1", c2, c2, 3, 1, 0.5, &mut rng),
            up1: Conv2d::new(&mut ps, "dec.up1", c2, c2, 3, 1, s2, &mut rng),
            narrow: Conv2d::new(&mut ps, "dec.narrow", c2, c1, 3, 1, s2, &mut rng),
            up2: Conv2d::new(&mut ps, "dec.up2", c1, c1, 3, 1, s2, &mut rng),
            to_pixels: Conv2d::new(&mut ps, "dec.to_pixels", c1, 1, 3, 1, 1.0, &mut rng),
        };
        let n = config.n_codes;
        // Placeholder spread; training re-initialises from encoder outputs.
        let codebook = ps.insert_uniform("codebook", &[n, cl], 1, 0.05, &mut rng);
        Ok(Self { config, params: ps, enc, dec, codebook })
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub(crate) fn codebook_id(&self) -> ParamId {
        self.codebook
    }

    /// SHA-256 over all weights (used to prove the model stays frozen).
    pub fn fingerprint(&self) -> String {
        self.params.fingerprint()
    }

    pub fn codebook(&self) -> Codebook {
        let e = self.params.get(self.codebook).view().into_dimensionality::<ndarray::Ix2>().expect("2-D codebook");
        Codebook::new(e.to_owned())
    }

    pub(crate) fn set_codebook(&mut self, entries: Array2<f32>) {
        *self.params.get_mut(self.codebook) = entries.into_dyn();
    }

    pub(crate) fn encode_graph(&self, g: &Graph<f32>, x: Var) -> Var {
        let ps = &self.params;
        let e = &self.enc;
        let h = g.silu(e.conv_in.forward(g, ps, x));
        let h = g.silu(e.down1.forward(g, ps, h));
        let h = g.add(h, g.silu(e.res1.forward(g, ps, h)));
        let h = g.silu(e.down2.forward(g, ps, h));
        let h = g.add(h, g.silu(e.res2.forward(g, ps, h)));
        e.to_latent.forward(g, ps, h)
    }

    pub(crate) fn decode_graph(&self, g: &Graph<f32>, z: Var) -> Var {
        let ps = &self.params;
        let d = &self.dec;
        let h = g.silu(d.from_latent.forward(g, ps, z));
        let h = g.add(h, g.silu(d.res1.forward(g, ps, h)));
        let h = g.silu(d.up1.forward(g, ps, g.upsample2(h)));
        let h = g.silu(d.narrow.forward(g, ps, h));
        let h = g.silu(d.up2.forward(g, ps, g.upsample2(h)));
        d.to_pixels.forward(g, ps, h)
    }

    fn check_frames(&self, h: usize, w: usize) -> Result<(), AutoencoderError> {
        if h == 0 || w == 0 || !h.is_multiple_of(DOWNSAMPLE) || !w.is_multiple_of(DOWNSAMPLE) {
            return Err(AutoencoderError::Shape(format!("{h}x{w} frames are not divisible by {DOWNSAMPLE}")));
        }
        Ok(())
    }

    /// Continuous latents for `[N, H, W]` frames, as `[N, C, H/4, W/4]`.
    pub fn encode_frames(&self, frames: ArrayView3<f32>) -> Result<Array4<f32>, AutoencoderError> {
        let (n, h, w) = frames.dim();
        self.check_frames(h, w)?;
        let c = self.config.latent_channels;
        let mut out = Array4::zeros((n, c, h / DOWNSAMPLE, w / DOWNSAMPLE));
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(n);
            let chunk = frames.slice(s![start..end, .., ..]).to_owned().insert_axis(Axis(1));
            let g = Graph::inference();
            let x = g.constant(chunk.into_dyn());
            let z = self.encode_graph(&g, x);
            let zv = g.value(z);
            out.slice_mut(s![start..end, .., .., ..]).assign(&zv.view().into_dimensionality::<Ix4>().expect("4-D"));
        }
        Ok(out)
    }

    pub fn encode(&self, frame: ArrayView2<f32>) -> Result<LatentGrid, AutoencoderError> {
        let z = self.encode_frames(frame.insert_axis(Axis(0)))?;
        Ok(LatentGrid::continuous(z.index_axis_move(Axis(0), 0)))
    }

    /// Quantize, then decode `[N, C, h, w]` latents to `[N, 4h, 4w]` frames in `[0, 1]`.
    pub fn decode_latents(&self, z: ArrayView4<f32>) -> Result<Array3<f32>, AutoencoderError> {
        let (n, c, h, w) = z.dim();
        if c != self.config.latent_channels {
            return Err(AutoencoderError::Shape(format!("latent has {c} channels, model expects {}", self.config.latent_channels)));
        }
        let codebook = self.codebook();
        let cb = codebook.entries.clone().into_dyn();
        let mut out = Array3::zeros((n, h * DOWNSAMPLE, w * DOWNSAMPLE));
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(n);
            let chunk = z.slice(s![start..end, .., .., ..]);
            let idx = Arc::new(nearest_codes(chunk, &codebook));
            let g = Graph::inference();
            let cbv = g.constant(cb.clone());
            let q = g.gather_codes(cbv, idx, (end - start, h, w));
            let y = self.decode_graph(&g, q);
            let yv = g.value(y);
            let y4 = yv.view().into_dimensionality::<Ix4>().expect("4-D");
            out.slice_mut(s![start..end, .., ..]).assign(&y4.index_axis(Axis(1), 0).mapv(|v| v.clamp(0.0, 1.0)));
        }
        Ok(out)
    }

    pub fn decode(&self, latent: &LatentGrid) -> Result<Array2<f32>, AutoencoderError> {
        let z = latent.values.view().insert_axis(Axis(0));
        Ok(self.decode_latents(z)?.index_axis_move(Axis(0), 0))
    }

    /// Encode then decode (through the quantizer).
    pub fn reconstruct(&self, frames: ArrayView3<f32>) -> Result<Array3<f32>, AutoencoderError> {
        let z = self.encode_frames(frames)?;
        self.decode_latents(z.view())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND)
            .with_header("downsample", DOWNSAMPLE)
            .with_header("latent_channels", self.config.latent_channels)
            .with_header("n_codes", self.config.n_codes)
            .with_header("base_channels", self.config.base_channels)
            .with_header("mid_channels", self.config.mid_channels)
            .with_header("seed", self.config.seed);
        ck.tensors = self.params.to_named_f32();
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, AutoencoderError> {
        let field = |k: &str| -> Result<usize, AutoencoderError> {
            ck.header_value(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| AutoencoderError::CheckpointMismatch(format!("header field `{k}` missing or invalid")))
        };
        if field("downsample")? != DOWNSAMPLE {
            return Err(AutoencoderError::CheckpointMismatch("unsupported downsample factor".into()));
        }
        let config = AutoencoderConfig {
            base_channels: field("base_channels")?,
            mid_channels: field("mid_channels")?,
            latent_channels: field("latent_channels")?,
            n_codes: field("n_codes")?,
            seed: field("seed")? as u64,
        };
        let mut ae = Self::new(config)?;
        ae.params.load_named_f32(&ck.tensors).map_err(AutoencoderError::CheckpointMismatch)?;
        Ok(ae)
    }

    pub fn save(&self, path: &Path) -> Result<(), AutoencoderError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, AutoencoderError> {
        Self::from_checkpoint(&Checkpoint::load_kind(path, CHECKPOINT_KIND)?)
    }
}
