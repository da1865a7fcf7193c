//! PSNR, SSIM and LPIPS (with a seeded stand-in backbone) on a frame and
//! progressively blurred copies, rendered as a report.
//!
//! cargo run --example image_metrics

use cinesr::data::{synth_phantom_clip, PhantomConfig};
use cinesr::metrics::{score_frame, Lpips, MetricReport, ScoreAccumulator};
use cinesr::spatial::resize_bicubic_to;

fn main() -> anyhow::Result<()> {
    let clip = synth_phantom_clip(&PhantomConfig { size: 64, ..PhantomConfig::default() }, 10, 0)?;
    let lpips = Lpips::random(&[8, 16], 1);
    println!("backbone layers: {:?}", lpips.manifest());
    let mut rows = Vec::new();
    for factor in [1usize, 2, 4] {
        let mut acc = ScoreAccumulator::new(format!("down x{factor}"));
        for t in 0..clip.len() {
            let f = clip.frame(t);
            let small = resize_bicubic_to(f, 64 / factor, 64 / factor)?;
            let back = resize_bicubic_to(small.view(), 64, 64)?;
            acc.push(score_frame(f, back.view(), Some(&lpips))?);
        }
        rows.push(acc.finish()?);
    }
    let report = MetricReport { rows };
    print!("{}\n{}", report.to_table(), report.to_key_value());
    Ok(())
}
