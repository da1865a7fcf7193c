use ndarray::{Array4, ArrayView4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{forward_sample_batch, DiffusionError, DiffusionSchedule, UNet};
use crate::nn::{Adam, AdamConfig, Float, GradStore, Graph, Var};

/// `MSE(f_θ(forward_sample(x0, y, t, noise), cond, t), x0)` on a batch with
/// per-item steps. Returns the scalar loss node.
#[allow(clippy::too_many_arguments)]
pub fn training_loss<T: Float>(
    g: &Graph<T>,
    net: &UNet<T>,
    x0: ArrayView4<T>,
    y: ArrayView4<T>,
    cond: ArrayView4<T>,
    steps: &[usize],
    schedule: &DiffusionSchedule,
    noise: ArrayView4<T>,
) -> Result<Var, DiffusionError> {
    let x_t = forward_sample_batch(x0, y, steps, schedule, noise)?;
    net.check_input(x_t.shape(), cond.shape())?;
    let xv = g.constant(x_t.into_dyn());
    let cv = g.constant(cond.to_owned().into_dyn());
    let target = g.constant(x0.to_owned().into_dyn());
    let pred = net.forward_graph(g, xv, cv, steps);
    Ok(g.mse(pred, target))
}

/// Cached training pairs, all `[N, C, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPairs {
    pub x0: Array4<f32>,
    pub y: Array4<f32>,
    pub cond: Array4<f32>,
}

impl LatentPairs {
    pub fn new(x0: Array4<f32>, y: Array4<f32>, cond: Array4<f32>) -> Result<Self, DiffusionError> {
        if x0.shape() != y.shape() || x0.shape() != cond.shape() || x0.is_empty() {
            return Err(DiffusionError::ShapeMismatch(format!("x0 {:?}, y {:?}, cond {:?}", x0.shape(), y.shape(), cond.shape())));
        }
        Ok(Self { x0, y, cond })
    }

    pub fn len(&self) -> usize {
        self.x0.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Micro-batches per optimiser step; the effective batch is `batch_size · grad_accum`.
    pub grad_accum: usize,
    pub learning_rate: f64,
    pub warmup_iterations: usize,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self { iterations: 2000, batch_size: 16, grad_accum: 1, learning_rate: 5e-4, warmup_iterations: 50, grad_clip: 1.0, seed: 0 }
    }
}

impl DiffusionTrainConfig {
    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.grad_accum
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.batch_size == 0 || self.grad_accum == 0 || !(self.learning_rate > 0.0) || !(self.grad_clip >= 0.0) {
            return Err(DiffusionError::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionTrainRecord {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
    pub effective_batch: usize,
}

/// Owns the network and optimiser state. Iteration `i` draws its batch, steps
/// and noise from stream `i` of the seeded generator, so a resumed run
/// replays exactly.
#[derive(Debug, Clone)]
pub struct DenoiserTrainer {
    pub net: UNet<f32>,
    pub schedule: DiffusionSchedule,
    pub config: DiffusionTrainConfig,
    opt: Adam<f32>,
    iteration: usize,
}

impl DenoiserTrainer {
    pub fn new(net: UNet<f32>, schedule: DiffusionSchedule, config: DiffusionTrainConfig) -> Result<Self, DiffusionError> {
        config.validate()?;
        let adam = AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() };
        let opt = Adam::new(adam, net.params());
        Ok(Self { net, schedule, config, opt, iteration: 0 })
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn optimizer(&self) -> &Adam<f32> {
        &self.opt
    }

    /// Restore optimiser moments and the iteration counter after loading weights.
    pub fn resume(&mut self, iteration: usize, adam_step: u64, m: Vec<ndarray::ArrayD<f32>>, v: Vec<ndarray::ArrayD<f32>>) -> Result<(), DiffusionError> {
        self.opt.restore(adam_step, m, v).map_err(DiffusionError::Config)?;
        self.iteration = iteration;
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        let w = self.config.warmup_iterations;
        let scale = if w == 0 { 1.0 } else { ((self.iteration + 1) as f64 / w as f64).min(1.0) };
        self.config.learning_rate * scale
    }

    pub fn step(&mut self, data: &LatentPairs) -> Result<DiffusionTrainRecord, DiffusionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.iteration as u64);
        let (n, c, h, w) = data.x0.dim();
        let b = self.config.batch_size;
        let accum = self.config.grad_accum;
        let big_t = self.schedule.steps();
        let mut grads = GradStore::zeros_like(self.net.params());
        let mut loss_total = 0.0;
        for _ in 0..accum {
            let picks: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
            let steps: Vec<usize> = (0..b).map(|_| rng.random_range(1..=big_t)).collect();
            let noise = Array4::from_shape_simple_fn((b, c, h, w), || StandardNormal.sample(&mut rng));
            let x0 = data.x0.select(Axis(0), &picks);
            let y = data.y.select(Axis(0), &picks);
            let cond = data.cond.select(Axis(0), &picks);
            let g = Graph::new();
            let loss = training_loss(&g, &self.net, x0.view(), y.view(), cond.view(), &steps, &self.schedule, noise.view())?;
            loss_total += g.value(loss).iter().next().copied().unwrap_or(f32::NAN) as f64;
            g.backward(loss).accumulate_into(&mut grads);
        }
        if accum > 1 {
            grads.scale(1.0 / accum as f32);
        }
        let grad_norm = grads.global_norm();
        let clip = self.config.grad_clip;
        if clip > 0.0 && grad_norm > clip {
            grads.scale((clip / grad_norm) as f32);
        }
        let lr = self.learning_rate();
        self.opt.config.learning_rate = lr;
        self.opt.step(self.net.params_mut(), &grads);
        self.iteration += 1;
        Ok(DiffusionTrainRecord {
            iteration: self.iteration,
            loss: loss_total / accum as f64,
            grad_norm,
            learning_rate: lr,
            effective_batch: self.config.effective_batch(),
        })
    }
}
