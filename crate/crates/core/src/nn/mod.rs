//! Minimal reverse-mode autodiff over `ndarray`, sized for the desk-scale
//! autoencoder and denoiser.
//!
//! Everything is generic over [`Float`] so that the same model code runs in
//! `f32` for training and in `f64` for finite-difference gradient checks.

mod conv;
pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION};
pub use layers::{Conv2d, Linear};
pub use optim::{Adam, AdamConfig};
pub use params::{GradStore, ParamId, ParamStore};
pub use tape::{Gradients, Graph, Var};

/// Scalar types the engine can run on.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Float for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Float for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

#[inline]
pub(crate) fn lit<T: Float>(v: f64) -> T {
    T::from_f64_lossy(v)
}
