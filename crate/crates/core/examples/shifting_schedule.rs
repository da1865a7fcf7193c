//! The residual-shifting schedule and the forward process
//! `x_t = x0 + η_t (y − x0) + κ √η_t ε`, checked against its moments.
//!
//! cargo run --example shifting_schedule -- [steps] [kappa] [p]

use cinesr::diffusion::{forward_sample, ScheduleConfig};
use ndarray::Array1;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ScheduleConfig::default();
    if let Some(s) = args.next() {
        cfg.steps = s.parse()?;
    }
    if let Some(k) = args.next() {
        cfg.kappa = k.parse()?;
    }
    if let Some(p) = args.next() {
        cfg.p = p.parse()?;
    }
    let schedule = cfg.build()?;
    println!("{cfg:?}");
    for t in 1..=schedule.steps() {
        println!("  t = {t:>2}  eta = {:.5}  alpha = {:.5}", schedule.eta(t), schedule.alpha(t));
    }
    let (x0, y, t) = (0.2f64, 0.8f64, schedule.steps() / 2 + 1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let n = 20_000;
    let noise: Array1<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let xs = forward_sample(Array1::from_elem(n, x0).view(), Array1::from_elem(n, y).view(), t, &schedule, noise.view())?;
    let mean = xs.mean().unwrap_or(0.0);
    let var = xs.var(0.0);
    let eta = schedule.eta(t);
    println!("t = {t}: mean {mean:.4} (analytic {:.4}), var {var:.4} (analytic {:.4})", x0 + eta * (y - x0), cfg.kappa * cfg.kappa * eta);
    Ok(())
}
