//! Dense Farnebäck flow between a textured frame and a shifted copy.
//!
//! cargo run --example optical_flow -- [dx] [dy]

use cinesr::temporal::{estimate_flow, FlowParams};
use ndarray::Array2;

fn texture(y: f64, x: f64) -> f32 {
    (0.5 + 0.2 * (x / 5.0).sin() * (y / 7.0).cos() + 0.15 * ((x + 2.0 * y) / 9.0).sin()) as f32
}

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<f64>());
    let dx = args.next().transpose()?.unwrap_or(3.0);
    let dy = args.next().transpose()?.unwrap_or(0.0);
    let a = Array2::from_shape_fn((64, 64), |(y, x)| texture(y as f64, x as f64));
    // Content moves by (dx, dy): b(p) = a(p - d).
    let b = Array2::from_shape_fn((64, 64), |(y, x)| texture(y as f64 - dy, x as f64 - dx));
    let flow = estimate_flow(a.view(), b.view(), &FlowParams::default())?;
    let (mx, my) = flow.interior_mean(8);
    println!("true shift ({dx:.2}, {dy:.2}) px, interior mean flow ({mx:.3}, {my:.3}) px");
    let still = estimate_flow(a.view(), a.view(), &FlowParams::default())?;
    println!("identical frames: max |flow| = {:.2e} px", still.max_magnitude());
    Ok(())
}
