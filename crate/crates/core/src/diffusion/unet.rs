//! Small two-resolution U-Net that predicts `x̂0` from `x_t ⊕ cond` and a
//! sinusoidal step embedding.
//!
//! The output head is zero-initialised and added to `cond`, so an untrained
//! network predicts `x̂0 = cond`.

use std::path::Path;

use ndarray::{Array2, Array4, ArrayView4, Ix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Denoiser, DiffusionError};
use crate::nn::{Checkpoint, Conv2d, Float, Graph, Linear, ParamStore, Var};

pub const CHECKPOINT_KIND: &str = "denoiser";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    /// Channels of `x0` (three stacked frame latents).
    pub latent_channels: usize,
    pub base_channels: usize,
    pub time_dim: usize,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { latent_channels: 9, base_channels: 32, time_dim: 32, seed: 0 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.latent_channels == 0 || self.base_channels == 0 || self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return Err(DiffusionError::Config(format!("invalid denoiser config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ResBlock {
    conv1: Conv2d,
    time: Linear,
    conv2: Conv2d,
}

impl ResBlock {
    fn new<T: Float>(ps: &mut ParamStore<T>, name: &str, c: usize, td: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), c, c, 3, 1, 3f64.sqrt(), rng),
            time: Linear::new(ps, &format!("{name}.time"), td, c, rng),
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), c, c, 3, 1, 0.5 * 3f64.sqrt(), rng),
        }
    }

    fn forward<T: Float>(&self, g: &Graph<T>, ps: &ParamStore<T>, x: Var, emb: Var) -> Var {
        let h = self.conv1.forward(g, ps, g.silu(x));
        let h = g.add_channel_bias(h, self.time.forward(g, ps, emb));
        let h = self.conv2.forward(g, ps, g.silu(h));
        g.add(x, h)
    }
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    time1: Linear,
    time2: Linear,
    conv_in: Conv2d,
    res0a: ResBlock,
    res0b: ResBlock,
    down: Conv2d,
    res1a: ResBlock,
    res1b: ResBlock,
    up: Conv2d,
    merge: Conv2d,
    res2a: ResBlock,
    res2b: ResBlock,
    conv_out: Conv2d,
}

#[derive(Debug, Clone)]
pub struct UNet<T> {
    pub config: UNetConfig,
    params: ParamStore<T>,
    layers: Layers,
}

/// Sinusoidal embedding of 1-based steps, `[B, dim]`.
pub fn step_embedding<T: Float>(steps: &[usize], dim: usize) -> Array2<T> {
    let half = dim / 2;
    Array2::from_shape_fn((steps.len(), dim), |(b, j)| {
        let i = j % half;
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = steps[b] as f64 * freq;
        T::from_f64_lossy(if j < half { arg.sin() } else { arg.cos() })
    })
}

impl<T: Float> UNet<T> {
    pub fn new(config: UNetConfig) -> Result<Self, DiffusionError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (c, c2, td, lc) = (config.base_channels, 2 * config.base_channels, config.time_dim, config.latent_channels);
        let g = 3f64.sqrt();
        let ps = &mut store;
        let layers = Layers {
            time1: Linear::new(ps, "time1", td, td, &mut rng),
            time2: Linear::new(ps, "time2", td, td, &mut rng),
            conv_in: Conv2d::new(ps, "conv_in", 2 * lc, c, 3, 1, g, &mut rng),
            res0a: ResBlock::new(ps, "res0a", c, td, &mut rng),
            res0b: ResBlock::new(ps, "res0b", c, td, &mut rng),
            down: Conv2d::new(ps, "down", c, c2, 3, 2, g, &mut rng),
            res1a: ResBlock::new(ps, "res1a", c2, td, &mut rng),
            res1b: ResBlock::new(ps, "res1b", c2, td, &mut rng),
            up: Conv2d::new(ps, "up", c2, c, 3, 1, g, &mut rng),
            merge: Conv2d::new(ps, "merge", 2 * c, c, 3, 1, g, &mut rng),
            res2a: ResBlock::new(ps, "res2a", c, td, &mut rng),
            res2b: ResBlock::new(ps, "res2b", c, td, &mut rng),
            conv_out: Conv2d::new(ps, "conv_out", c, lc, 3, 1, g, &mut rng),
        };
        store.get_mut(layers.conv_out.weight).fill(T::zero());
        Ok(Self { config, params: store, layers })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Float>(&self) -> UNet<U> {
        UNet { config: self.config, params: self.params.cast(), layers: self.layers }
    }

    pub fn fingerprint(&self) -> String {
        self.params.fingerprint()
    }

    /// `x_t`, `cond`: `[B, C, h, w]` with even `h`, `w`. Returns `x̂0`.
    pub fn forward_graph(&self, g: &Graph<T>, x_t: Var, cond: Var, steps: &[usize]) -> Var {
        let (ps, l) = (&self.params, &self.layers);
        let emb = g.constant(step_embedding::<T>(steps, self.config.time_dim).into_dyn());
        let emb = l.time2.forward(g, ps, g.silu(l.time1.forward(g, ps, emb)));
        let h = l.conv_in.forward(g, ps, g.concat_channels(&[x_t, cond]));
        let h = l.res0a.forward(g, ps, h, emb);
        let skip = l.res0b.forward(g, ps, h, emb);
        let d = l.down.forward(g, ps, g.silu(skip));
        let d = l.res1a.forward(g, ps, d, emb);
        let d = l.res1b.forward(g, ps, d, emb);
        let u = l.up.forward(g, ps, g.upsample2(g.silu(d)));
        let m = l.merge.forward(g, ps, g.concat_channels(&[u, skip]));
        let m = l.res2a.forward(g, ps, m, emb);
        let m = l.res2b.forward(g, ps, m, emb);
        g.add(cond, l.conv_out.forward(g, ps, g.silu(m)))
    }

    pub(crate) fn check_input(&self, x_t: &[usize], cond: &[usize]) -> Result<(), DiffusionError> {
        let lc = self.config.latent_channels;
        if x_t != cond || x_t.len() != 4 || x_t[1] != lc || !x_t[2].is_multiple_of(2) || !x_t[3].is_multiple_of(2) || x_t[2] == 0 || x_t[3] == 0 {
            return Err(DiffusionError::ShapeMismatch(format!("denoiser with {lc} channels got x_t {x_t:?}, cond {cond:?} (need matching [B, {lc}, even, even])")));
        }
        Ok(())
    }
}

impl UNet<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND).with_header("config", serde_json::to_string(&self.config).expect("serialisable"));
        ck.tensors = self.params.to_named_f32();
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, DiffusionError> {
        let cfg = ck.header_value("config").ok_or_else(|| DiffusionError::Config("checkpoint lacks a config header".into()))?;
        let config: UNetConfig = serde_json::from_str(cfg).map_err(|e| DiffusionError::Config(e.to_string()))?;
        let mut net = Self::new(config)?;
        net.params.load_named_f32(&ck.tensors).map_err(DiffusionError::Config)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<(), DiffusionError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, DiffusionError> {
        Self::from_checkpoint(&Checkpoint::load_kind(path, CHECKPOINT_KIND)?)
    }
}

impl Denoiser for UNet<f32> {
    fn predict(&self, x_t: ArrayView4<f32>, cond: ArrayView4<f32>, t: usize) -> Result<Array4<f32>, DiffusionError> {
        self.check_input(x_t.shape(), cond.shape())?;
        let g = Graph::inference();
        let xv = g.constant(x_t.to_owned().into_dyn());
        let cv = g.constant(cond.to_owned().into_dyn());
        let steps = vec![t; x_t.dim().0];
        let y = self.forward_graph(&g, xv, cv, &steps);
        Ok(g.value(y).view().into_dimensionality::<Ix4>().expect("4-D").to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;

    #[test]
    fn untrained_net_predicts_cond() {
        let net = UNet::<f32>::new(UNetConfig { latent_channels: 3, base_channels: 4, time_dim: 8, seed: 1 }).unwrap();
        let x = Array4::from_shape_fn((2, 3, 4, 6), |(b, c, y, x)| (b + c + y * x) as f32 * 0.1);
        let cond = x.mapv(|v| 1.0 - v);
        assert_eq!(net.predict(x.view(), cond.view(), 3).unwrap(), cond);
    }

    #[test]
    fn rejects_bad_shapes() {
        let net = UNet::<f32>::new(UNetConfig { latent_channels: 3, base_channels: 4, time_dim: 8, seed: 1 }).unwrap();
        let odd = Array4::<f32>::zeros((1, 3, 5, 4));
        assert!(net.predict(odd.view(), odd.view(), 1).is_err());
        let wrong_c = Array4::<f32>::zeros((1, 2, 4, 4));
        assert!(net.predict(wrong_c.view(), wrong_c.view(), 1).is_err());
        assert!(UNet::<f32>::new(UNetConfig { time_dim: 7, ..Default::default() }).is_err());
    }

    #[test]
    fn step_embedding_distinguishes_steps() {
        let e = step_embedding::<f64>(&[1, 2, 15], 16);
        assert_eq!(e.dim(), (3, 16));
        assert!((e.row(0).to_owned() - e.row(1)).iter().any(|v| v.abs() > 0.1));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut net = UNet::<f32>::new(UNetConfig { latent_channels: 3, base_channels: 4, time_dim: 8, seed: 2 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = net.params().find("conv_out.weight").unwrap();
        net.params_mut().get_mut(id).mapv_inplace(|_| rng.random_range(-0.1..0.1));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.safetensors");
        net.save(&p).unwrap();
        let back = UNet::<f32>::load(&p).unwrap();
        assert_eq!(back.fingerprint(), net.fingerprint());
        let x = Array4::from_shape_fn((1, 3, 4, 4), |(_, c, y, x)| (c * 16 + y * 4 + x) as f32 / 48.0);
        assert_eq!(back.predict(x.view(), x.view(), 5).unwrap(), net.predict(x.view(), x.view(), 5).unwrap());
    }
}
