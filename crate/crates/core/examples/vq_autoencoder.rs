//! Pre-train a small VQ autoencoder on phantom frames (×4 down, 3 latent
//! channels) and report reconstruction PSNR and codebook usage.
//!
//! cargo run --release --example vq_autoencoder -- [steps]

use cinesr::autoencoder::{stack_frames, train_autoencoder, AeTrainConfig, AutoencoderConfig, VqAutoencoder};
use cinesr::data::{synth_phantom_clip, PhantomConfig};

fn main() -> anyhow::Result<()> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(60);
    let pc = PhantomConfig { size: 32, ..PhantomConfig::default() };
    let clips: Vec<_> = (0..4).map(|s| synth_phantom_clip(&pc, 30, s)).collect::<Result<_, _>>()?;
    let train = stack_frames(clips.iter().map(|c| c.frames.view()));
    let val = synth_phantom_clip(&pc, 12, 99)?;
    let mut ae = VqAutoencoder::new(AutoencoderConfig { base_channels: 8, mid_channels: 12, n_codes: 64, ..AutoencoderConfig::default() })?;
    let cfg = AeTrainConfig { steps, warmup_steps: steps / 3, eval_every: (steps / 4).max(1), ..AeTrainConfig::default() };
    let report = train_autoencoder(&mut ae, train.view(), val.frames.view(), &cfg, |r| {
        if let Some(p) = r.val_psnr {
            println!("step {:>5}  loss {:.5}  val {:.2} dB", r.step, r.loss, p);
        }
    })?;
    println!("final {:.2} dB, {} of {} codes in use", report.final_psnr, report.codes_in_use, ae.config.n_codes);
    let z = ae.encode(val.frame(0))?;
    println!("latent grid {:?} for a 32x32 frame", z.shape());
    Ok(())
}
