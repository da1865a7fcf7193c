use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Graph, Var};
use super::Float;

/// Square-kernel, zero-padded 2-D convolution with bias.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// `same`-padded convolution (`pad = kernel / 2`).
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.insert_uniform(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            fan_in,
            gain,
            rng,
        );
        let bias = store.insert_zeros(format!("{name}.bias"), &[out_channels]);
        Self { weight, bias, in_channels, out_channels, kernel, stride, pad: kernel / 2 }
    }

    pub fn forward<T: Float>(&self, g: &Graph<T>, ps: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(ps, self.weight);
        let b = g.param(ps, self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// Dense layer on `[B, F]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Float, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.insert_uniform(format!("{name}.weight"), &[outputs, inputs], inputs, 1.0, rng);
        let bias = store.insert_zeros(format!("{name}.bias"), &[outputs]);
        Self { weight, bias }
    }

    pub fn forward<T: Float>(&self, g: &Graph<T>, ps: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(ps, self.weight);
        let b = g.param(ps, self.bias);
        g.linear(x, w, b)
    }
}
