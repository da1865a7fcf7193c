use serde::{Deserialize, Serialize};

use super::DiffusionError;

/// Parameters of the shifting sequence η.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub kappa: f64,
    pub p: f64,
    pub eta_min: f64,
    pub eta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 15, kappa: 2.0, p: 0.3, eta_min: 0.04, eta_max: 0.999 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule, DiffusionError> {
        DiffusionSchedule::new(self.steps, self.kappa, self.p, self.eta_min, self.eta_max)
    }
}

/// `√η_t = √η_min · (√η_max / √η_min)^{w_t}` with `w_t = ((t − 1)/(T − 1))^p`.
/// Steps are 1-based; `eta(0)` is defined as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub config: ScheduleConfig,
    eta: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(steps: usize, kappa: f64, p: f64, eta_min: f64, eta_max: f64) -> Result<Self, DiffusionError> {
        let bad = |m: String| Err(DiffusionError::InvalidScheduleParams(m));
        if steps < 2 {
            return bad(format!("need at least 2 steps, got {steps}"));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return bad(format!("kappa must be positive, got {kappa}"));
        }
        if !(p > 0.0 && p.is_finite()) {
            return bad(format!("p must be positive, got {p}"));
        }
        if !(eta_min > 0.0 && eta_min < eta_max && eta_max <= 1.0) {
            return bad(format!("need 0 < eta_min < eta_max <= 1, got {eta_min}, {eta_max}"));
        }
        let (s0, s1) = (eta_min.sqrt(), eta_max.sqrt());
        let mut eta: Vec<f64> = (1..=steps)
            .map(|t| {
                let w = ((t - 1) as f64 / (steps - 1) as f64).powf(p);
                (s0 * (s1 / s0).powf(w)).powi(2)
            })
            .collect();
        // Pin the endpoints exactly; the power form can be off by an ulp.
        eta[0] = eta_min;
        eta[steps - 1] = eta_max;
        let config = ScheduleConfig { steps, kappa, p, eta_min, eta_max };
        Ok(Self { config, eta })
    }

    pub fn steps(&self) -> usize {
        self.config.steps
    }

    pub fn kappa(&self) -> f64 {
        self.config.kappa
    }

    pub fn eta(&self, t: usize) -> f64 {
        if t == 0 { 0.0 } else { self.eta[t - 1] }
    }

    pub fn etas(&self) -> &[f64] {
        &self.eta
    }

    /// `α_t = η_t − η_{t−1}`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.eta(t) - self.eta(t - 1)
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::StepOutOfRange { t, steps: self.steps() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_endpoints_are_exact() {
        let s = ScheduleConfig::default().build().unwrap();
        assert_eq!(s.steps(), 15);
        assert_eq!(s.eta(1), 0.04);
        assert_eq!(s.eta(15), 0.999);
    }

    #[test]
    fn two_steps_is_just_the_endpoints() {
        let s = DiffusionSchedule::new(2, 1.0, 0.3, 0.01, 0.99).unwrap();
        assert_eq!(s.etas(), &[0.01, 0.99]);
    }

    #[test]
    fn p_one_spaces_log_sqrt_eta_evenly() {
        let s = DiffusionSchedule::new(9, 1.0, 1.0, 0.02, 0.98).unwrap();
        let logs: Vec<f64> = s.etas().iter().map(|e| e.sqrt().ln()).collect();
        let d0 = logs[1] - logs[0];
        let want = (0.98f64.sqrt().ln() - 0.02f64.sqrt().ln()) / 8.0;
        assert!((d0 - want).abs() < 1e-12);
        for w in logs.windows(2) {
            assert!((w[1] - w[0] - d0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_invalid_params() {
        for (t, k, p, a, b) in [(1, 2.0, 0.3, 0.04, 0.999), (15, 0.0, 0.3, 0.04, 0.999), (15, 2.0, 0.3, 0.5, 0.4), (15, 2.0, 0.3, 0.04, 1.5), (15, 2.0, 0.0, 0.04, 0.9)] {
            assert!(matches!(DiffusionSchedule::new(t, k, p, a, b), Err(DiffusionError::InvalidScheduleParams(_))));
        }
    }

    proptest! {
        #[test]
        fn monotone_with_exact_endpoints(steps in 2usize..40, p in 0.05f64..3.0, lo in 0.001f64..0.05, hi in 0.95f64..1.0) {
            let s = DiffusionSchedule::new(steps, 1.0, p, lo, hi).unwrap();
            prop_assert_eq!(s.eta(1), lo);
            prop_assert_eq!(s.eta(steps), hi);
            for w in s.etas().windows(2) {
                prop_assert!(w[1] > w[0]);
            }
        }
    }
}
