//! The 15-step reverse sampler with an oracle denoiser that always predicts
//! the true `x0`: counts denoiser calls and shows the trajectory snapshots.
//!
//! cargo run --example reverse_sampler -- [kappa]

use cinesr::diffusion::fixtures::{ConstantDenoiser, CountingDenoiser};
use cinesr::diffusion::{sample, ScheduleConfig};
use ndarray::Array4;

fn main() -> anyhow::Result<()> {
    let kappa = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2.0);
    let schedule = ScheduleConfig { kappa, ..ScheduleConfig::default() }.build()?;
    let x0 = Array4::from_shape_fn((1, 9, 8, 8), |(_, c, y, x)| ((c + y * x) % 7) as f32 / 7.0 - 0.5);
    let y = x0.mapv(|v| 0.5 * v + 0.1);
    let oracle = CountingDenoiser::new(ConstantDenoiser::new(x0.clone()));
    let out = sample(&oracle, y.view(), y.view(), &schedule, 7, true)?;
    println!("denoiser calls: {} (steps seen {:?})", oracle.calls(), oracle.steps_seen());
    for snap in out.trajectory.iter().flatten() {
        let err = snap.state.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        println!("  progress {:.2} (t = {:>2}): max |x - x0| = {err:.4}", snap.progress, snap.t);
    }
    Ok(())
}
