//! Train the latent U-Net denoiser on synthetic latent pairs with gradient
//! accumulation, then checkpoint, reload and resume.
//!
//! cargo run --release --example train_denoiser -- [iterations]

use cinesr::diffusion::{DenoiserTrainer, DiffusionTrainConfig, LatentPairs, ScheduleConfig, UNet, UNetConfig};
use cinesr::nn::Checkpoint;
use ndarray::Array4;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> anyhow::Result<()> {
    let iterations = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(40);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let x0: Array4<f32> = Array4::from_shape_simple_fn((32, 9, 8, 8), || StandardNormal.sample(&mut rng));
    // Conditioning: a blurred, noisy view of x0.
    let y = &x0.mapv(|v: f32| 0.7 * v) + &Array4::from_shape_simple_fn((32, 9, 8, 8), || 0.2 * Distribution::<f32>::sample(&StandardNormal, &mut rng));
    let data = LatentPairs::new(x0, y.clone(), y)?;
    let net = UNet::new(UNetConfig { latent_channels: 9, base_channels: 8, time_dim: 16, seed: 0 })?;
    let cfg = DiffusionTrainConfig { iterations, batch_size: 4, grad_accum: 2, warmup_iterations: 5, learning_rate: 2e-3, ..DiffusionTrainConfig::default() };
    let mut trainer = DenoiserTrainer::new(net, ScheduleConfig::default().build()?, cfg.clone())?;
    let mut losses = Vec::new();
    while trainer.iteration() < iterations {
        let r = trainer.step(&data)?;
        if r.iteration % 10 == 0 {
            println!("iter {:>4}  loss {:.4}  |g| {:.3}  batch {}", r.iteration, r.loss, r.grad_norm, r.effective_batch);
        }
        losses.push(r.loss);
    }
    let tenth = (losses.len() / 10).max(1);
    let head: f64 = losses[..tenth].iter().sum::<f64>() / tenth as f64;
    let tail: f64 = losses[losses.len() - tenth..].iter().sum::<f64>() / tenth as f64;
    println!("mean loss: first {tenth} iters {head:.4}, last {tenth} iters {tail:.4}");

    let path = std::env::temp_dir().join("cinesr-denoiser-example.safetensors");
    trainer.net.save(&path)?;
    let back = UNet::load(&path)?;
    let ck = Checkpoint::load(&path)?;
    println!("checkpoint kind {:?}, {} tensors, weights preserved: {}", ck.kind, ck.tensors.len(), back.fingerprint() == trainer.net.fingerprint());
    Ok(())
}
