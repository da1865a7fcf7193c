//! The residual-shifting forward marginal and its reverse transition.

use ndarray::{Array, ArrayView, Axis, Dimension, RemoveAxis, Zip};

use super::{DiffusionError, DiffusionSchedule};
use crate::nn::Float;

fn check<T, D: Dimension>(what: &str, a: &ArrayView<T, D>, b: &ArrayView<T, D>) -> Result<(), DiffusionError> {
    if a.shape() != b.shape() {
        return Err(DiffusionError::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `x_t = x0 + η_t (y − x0) + κ √η_t · noise`.
pub fn forward_sample<T: Float, D: Dimension>(
    x0: ArrayView<T, D>,
    y: ArrayView<T, D>,
    t: usize,
    schedule: &DiffusionSchedule,
    noise: ArrayView<T, D>,
) -> Result<Array<T, D>, DiffusionError> {
    schedule.check_step(t)?;
    check("x0/y", &x0, &y)?;
    check("x0/noise", &x0, &noise)?;
    let eta = T::from_f64_lossy(schedule.eta(t));
    let sd = T::from_f64_lossy(schedule.kappa() * schedule.eta(t).sqrt());
    Ok(Zip::from(&x0).and(&y).and(&noise).map_collect(|&a, &b, &n| a + eta * (b - a) + sd * n))
}

/// [`forward_sample`] with a separate step for every item along axis 0.
pub fn forward_sample_batch<T: Float, D: Dimension + RemoveAxis>(
    x0: ArrayView<T, D>,
    y: ArrayView<T, D>,
    steps: &[usize],
    schedule: &DiffusionSchedule,
    noise: ArrayView<T, D>,
) -> Result<Array<T, D>, DiffusionError> {
    check("x0/y", &x0, &y)?;
    check("x0/noise", &x0, &noise)?;
    if x0.ndim() == 0 || x0.len_of(Axis(0)) != steps.len() {
        return Err(DiffusionError::ShapeMismatch(format!("{} steps for batch {:?}", steps.len(), x0.shape())));
    }
    let mut out = Array::zeros(x0.raw_dim());
    for (i, &t) in steps.iter().enumerate() {
        let xi = forward_sample(x0.index_axis(Axis(0), i), y.index_axis(Axis(0), i), t, schedule, noise.index_axis(Axis(0), i))?;
        out.index_axis_mut(Axis(0), i).assign(&xi);
    }
    Ok(out)
}

/// Mean and variance of `q(x_{t−1} | x_t, x0)`: mean is
/// `(η_{t−1}/η_t) x_t + (α_t/η_t) x̂0`, variance `κ² (η_{t−1}/η_t) α_t`.
/// The shift target `y` cancels out of both.
pub fn posterior_coefficients(schedule: &DiffusionSchedule, t: usize) -> Result<(f64, f64, f64), DiffusionError> {
    schedule.check_step(t)?;
    let (e, ep) = (schedule.eta(t), schedule.eta(t - 1));
    let a = schedule.alpha(t);
    let k = schedule.kappa();
    Ok((ep / e, a / e, k * k * ep / e * a))
}

/// One reverse step. At `t = 1` the prediction `x̂0` is returned unchanged
/// and `noise` is ignored.
pub fn posterior_step<T: Float, D: Dimension>(
    x_t: ArrayView<T, D>,
    x0_hat: ArrayView<T, D>,
    t: usize,
    schedule: &DiffusionSchedule,
    noise: ArrayView<T, D>,
) -> Result<Array<T, D>, DiffusionError> {
    schedule.check_step(t)?;
    check("x_t/x0_hat", &x_t, &x0_hat)?;
    if t == 1 {
        return Ok(x0_hat.to_owned());
    }
    check("x_t/noise", &x_t, &noise)?;
    let (cx, c0, var) = posterior_coefficients(schedule, t)?;
    let (cx, c0, sd) = (T::from_f64_lossy(cx), T::from_f64_lossy(c0), T::from_f64_lossy(var.sqrt()));
    Ok(Zip::from(&x_t).and(&x0_hat).and(&noise).map_collect(|&x, &p, &n| cx * x + c0 * p + sd * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleConfig;
    use ndarray::{Array1, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(n: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
        Array1::from_shape_fn(n, |_| StandardNormal.sample(rng))
    }

    fn moments(v: &Array1<f64>) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.sum() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    fn assert_matches_gaussian(samples: &Array1<f64>, mean: f64, var: f64, what: &str) {
        let (m, v) = moments(samples);
        let se = (var / samples.len() as f64).sqrt();
        assert!((m - mean).abs() <= 3.0 * se, "{what}: mean {m} vs {mean} (3σ = {})", 3.0 * se);
        assert!((v / var - 1.0).abs() <= 0.05, "{what}: var {v} vs {var}");
    }

    #[test]
    fn deterministic_core() {
        let s = ScheduleConfig::default().build().unwrap();
        let x0 = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.1);
        let y = x0.mapv(|v| 1.0 - v);
        let z = Array2::zeros((3, 4));
        for t in 1..=15 {
            let xt = forward_sample(x0.view(), y.view(), t, &s, z.view()).unwrap();
            let want = &x0 + &((&y - &x0) * s.eta(t));
            assert!(xt.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
            assert_eq!(forward_sample(x0.view(), x0.view(), t, &s, z.view()).unwrap(), x0);
        }
    }

    #[test]
    fn errors() {
        let s = ScheduleConfig::default().build().unwrap();
        let a = Array2::<f64>::zeros((2, 2));
        let b = Array2::<f64>::zeros((2, 3));
        assert!(matches!(forward_sample(a.view(), b.view(), 1, &s, a.view()), Err(DiffusionError::ShapeMismatch(_))));
        assert!(matches!(forward_sample(a.view(), a.view(), 0, &s, a.view()), Err(DiffusionError::StepOutOfRange { .. })));
        assert!(matches!(forward_sample(a.view(), a.view(), 16, &s, a.view()), Err(DiffusionError::StepOutOfRange { .. })));
        assert!(matches!(posterior_step(a.view(), a.view(), 16, &s, a.view()), Err(DiffusionError::StepOutOfRange { .. })));
    }

    #[test]
    fn forward_is_affine() {
        let s = ScheduleConfig::default().build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Vec<Array1<f64>> = (0..6).map(|_| gauss(10, &mut rng)).collect();
        let (a, b) = (0.7, -1.3);
        for t in [1, 6, 15] {
            let f = |x: &Array1<f64>, y: &Array1<f64>, n: &Array1<f64>| forward_sample(x.view(), y.view(), t, &s, n.view()).unwrap();
            let lhs = f(&(&p[0] * a + &p[3] * b), &(&p[1] * a + &p[4] * b), &(&p[2] * a + &p[5] * b));
            let rhs = f(&p[0], &p[1], &p[2]) * a + f(&p[3], &p[4], &p[5]) * b;
            assert!(lhs.iter().zip(&rhs).all(|(l, r)| (l - r).abs() < 1e-12));
        }
    }

    #[test]
    fn forward_moments_monte_carlo() {
        let s = ScheduleConfig::default().build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let (x0, y) = (0.3, -0.8);
        for t in [1, 8, 15] {
            let xs = Array1::from_elem(n, x0);
            let ys = Array1::from_elem(n, y);
            let out = forward_sample(xs.view(), ys.view(), t, &s, gauss(n, &mut rng).view()).unwrap();
            let mean = x0 + s.eta(t) * (y - x0);
            assert_matches_gaussian(&out, mean, s.kappa().powi(2) * s.eta(t), &format!("t={t}"));
        }
    }

    #[test]
    fn terminal_step_returns_prediction() {
        let s = ScheduleConfig::default().build().unwrap();
        let x = Array1::from_vec(vec![1.0, 2.0]);
        let p = Array1::from_vec(vec![-4.0, 0.5]);
        let noise = Array1::from_vec(vec![9.0, 9.0]);
        assert_eq!(posterior_step(x.view(), p.view(), 1, &s, noise.view()).unwrap(), p);
    }

    #[test]
    fn two_step_substitution() {
        let s = DiffusionSchedule::new(2, 1.5, 0.3, 0.04, 0.999).unwrap();
        let x0 = Array1::from_vec(vec![0.2, -0.4, 1.0]);
        let y = Array1::from_vec(vec![0.9, 0.1, -0.5]);
        let z = Array1::zeros(3);
        let xt = forward_sample(x0.view(), y.view(), 2, &s, z.view()).unwrap();
        let x1 = posterior_step(xt.view(), x0.view(), 2, &s, z.view()).unwrap();
        let want = &x0 + &((&y - &x0) * s.eta(1));
        assert!(x1.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    /// x_t from the forward marginal, stepped back once, must match the
    /// forward marginal at t − 1.
    #[test]
    fn two_path_marginal_consistency_every_step() {
        let s = DiffusionSchedule::new(5, 2.0, 0.3, 0.04, 0.999).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 10_000;
        let (x0v, yv) = (0.25, 1.1);
        let x0 = Array1::from_elem(n, x0v);
        let y = Array1::from_elem(n, yv);
        for t in 2..=5 {
            let xt = forward_sample(x0.view(), y.view(), t, &s, gauss(n, &mut rng).view()).unwrap();
            let back = posterior_step(xt.view(), x0.view(), t, &s, gauss(n, &mut rng).view()).unwrap();
            let mean = x0v + s.eta(t - 1) * (yv - x0v);
            assert_matches_gaussian(&back, mean, s.kappa().powi(2) * s.eta(t - 1), &format!("t={t}"));
        }
        // Full chain from x_T.
        let mut x = forward_sample(x0.view(), y.view(), 5, &s, gauss(n, &mut rng).view()).unwrap();
        for t in (2..=5).rev() {
            x = posterior_step(x.view(), x0.view(), t, &s, gauss(n, &mut rng).view()).unwrap();
            let mean = x0v + s.eta(t - 1) * (yv - x0v);
            assert_matches_gaussian(&x, mean, s.kappa().powi(2) * s.eta(t - 1), &format!("chain t={}", t - 1));
        }
    }

    #[test]
    fn batch_uses_per_item_steps() {
        let s = ScheduleConfig::default().build().unwrap();
        let x0 = Array2::from_shape_fn((3, 4), |(i, j)| (i + j) as f64);
        let y = x0.mapv(|v| v * 2.0 + 1.0);
        let n = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.1);
        let steps = [1, 7, 15];
        let b = forward_sample_batch(x0.view(), y.view(), &steps, &s, n.view()).unwrap();
        for (i, &t) in steps.iter().enumerate() {
            let r = forward_sample(x0.row(i), y.row(i), t, &s, n.row(i)).unwrap();
            assert_eq!(b.row(i), r);
        }
        assert!(forward_sample_batch(x0.view(), y.view(), &[1, 2], &s, n.view()).is_err());
    }
}
