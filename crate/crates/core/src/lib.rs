pub mod nn;
pub mod data;
pub mod spatial;
pub mod temporal;
pub mod autoencoder;
pub mod metrics;
pub mod diffusion;
pub mod harness;
