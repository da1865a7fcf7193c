//! Realistic (two-stage blur / resize / noise / JPEG, sinc) versus
//! bicubic-only ×4 degradation of one triplet.
//!
//! cargo run --example degradation -- [seed]

use cinesr::data::{synth_phantom_clip, PhantomConfig};
use cinesr::metrics::psnr;
use cinesr::spatial::{degrade, resize_bicubic_to, DegradationConfig, DegradationPlan};
use ndarray::s;

fn main() -> anyhow::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(11);
    let clip = synth_phantom_clip(&PhantomConfig { size: 128, ..PhantomConfig::default() }, 30, 2)?;
    let triplet = clip.frames.slice(s![4..7, .., ..]);
    for (name, cfg) in [("bicubic", DegradationConfig::bicubic_only(4)), ("realistic", DegradationConfig::realistic(4))] {
        let lr = degrade(triplet, &cfg, seed)?;
        let up = resize_bicubic_to(lr.slice(s![1, .., ..]), 128, 128)?;
        println!("{name:>9}: lr {:?}, bicubic-up PSNR of the middle frame {:.2} dB", lr.dim(), psnr(triplet.slice(s![1, .., ..]), up.view())?);
    }
    let plan = DegradationPlan::draw(&DegradationConfig::realistic(4), (128, 128), seed);
    println!("drawn plan: {plan:#?}");
    Ok(())
}
