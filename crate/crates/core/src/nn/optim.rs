use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use super::params::{GradStore, ParamStore};
use super::{lit, Float};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam without weight decay.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.ids().map(|id| ArrayD::zeros(params.get(id).raw_dim())).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &GradStore<T>) {
        self.step += 1;
        let c = self.config;
        let (b1, b2): (T, T) = (lit(c.beta1), lit(c.beta2));
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size: T = lit(c.learning_rate * bc2.sqrt() / bc1);
        let eps: T = lit(c.eps * bc2.sqrt());
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads.get(id);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.get_mut(id);
            Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() + eps);
            });
        }
    }

    /// Moment buffers in parameter order, for checkpointing.
    pub fn state(&self) -> (u64, &[ArrayD<T>], &[ArrayD<T>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<ArrayD<T>>, v: Vec<ArrayD<T>>) -> Result<(), String> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err("optimizer state has the wrong number of buffers".into());
        }
        for (a, b) in self.m.iter().zip(&m).chain(self.v.iter().zip(&v)) {
            if a.shape() != b.shape() {
                return Err("optimizer buffer shape mismatch".into());
            }
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn first_step_moves_each_coordinate_by_learning_rate() {
        let mut ps = ParamStore::<f64>::new();
        let id = ps.insert("p", ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0, -1.0]).unwrap());
        let mut grads = GradStore::zeros_like(&ps);
        grads.add(id, &ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.5, -3.0]).unwrap());
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() }, &ps);
        opt.step(&mut ps, &grads);
        let p = ps.get(id);
        assert!((p[[0]] - 0.9).abs() < 1e-6);
        assert!((p[[1]] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut ps = ParamStore::<f64>::new();
        let id = ps.insert("p", ArrayD::from_elem(IxDyn(&[3]), 4.0));
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.05, ..Default::default() }, &ps);
        let mut grads = GradStore::zeros_like(&ps);
        for _ in 0..2000 {
            grads.zero();
            let g = ps.get(id).mapv(|x| 2.0 * (x - 1.5));
            grads.add(id, &g);
            opt.step(&mut ps, &grads);
        }
        assert!(ps.get(id).iter().all(|&x| (x - 1.5).abs() < 1e-3));
    }
}
