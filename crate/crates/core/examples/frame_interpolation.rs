//! Flow-based interpolation of the interior of a 9-frame window, compared
//! with the true phantom frames.
//!
//! cargo run --example frame_interpolation -- [seed]

use cinesr::data::{synth_phantom_clip, PhantomConfig};
use cinesr::metrics::psnr;
use cinesr::temporal::{sample_training_window, FlowParams, DEFAULT_K};
use ndarray::Axis;

fn main() -> anyhow::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let clip = synth_phantom_clip(&PhantomConfig { size: 64, ..PhantomConfig::default() }, 30, 1)?;
    let w = sample_training_window(&clip, DEFAULT_K, seed, &FlowParams::default())?;
    println!("window starts at frame {}, triplet offsets {:?}", w.start_index, w.triplet_offsets);
    for (i, f) in w.interpolated.outer_iter().enumerate() {
        let truth = clip.frame(w.start_index + i + 1);
        let a = w.endpoint_a.view();
        println!("  tau = {}/8: interpolated {:.2} dB, held endpoint {:.2} dB", i + 1, psnr(truth, f)?, psnr(truth, a)?);
    }
    let tri = w.interpolated_triplet();
    println!("triplet {:?}, gt {:?}", tri.len_of(Axis(0)), w.gt_frames.dim());
    Ok(())
}
