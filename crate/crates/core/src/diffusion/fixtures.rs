//! Denoisers for tests and oracle evaluations. Not models.

use std::cell::RefCell;

use ndarray::{Array4, ArrayView4};

use super::{Denoiser, DiffusionError};

/// Ignores its inputs and returns a fixed stack, e.g. the true `x0`.
#[derive(Debug, Clone)]
pub struct ConstantDenoiser {
    value: Array4<f32>,
}

impl ConstantDenoiser {
    pub fn new(value: Array4<f32>) -> Self {
        Self { value }
    }
}

impl Denoiser for ConstantDenoiser {
    fn predict(&self, x_t: ArrayView4<f32>, _cond: ArrayView4<f32>, _t: usize) -> Result<Array4<f32>, DiffusionError> {
        if x_t.shape() != self.value.shape() {
            return Err(DiffusionError::ShapeMismatch(format!("fixture holds {:?}, got {:?}", self.value.shape(), x_t.shape())));
        }
        Ok(self.value.clone())
    }
}

/// Wraps a denoiser and records the step of every call.
#[derive(Debug)]
pub struct CountingDenoiser<D> {
    inner: D,
    seen: RefCell<Vec<usize>>,
}

impl<D> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self { inner, seen: RefCell::new(Vec::new()) }
    }

    pub fn calls(&self) -> usize {
        self.seen.borrow().len()
    }

    pub fn steps_seen(&self) -> Vec<usize> {
        self.seen.borrow().clone()
    }

    pub fn reset(&self) {
        self.seen.borrow_mut().clear();
    }
}

impl<D: Denoiser> Denoiser for CountingDenoiser<D> {
    fn predict(&self, x_t: ArrayView4<f32>, cond: ArrayView4<f32>, t: usize) -> Result<Array4<f32>, DiffusionError> {
        self.seen.borrow_mut().push(t);
        self.inner.predict(x_t, cond, t)
    }
}
