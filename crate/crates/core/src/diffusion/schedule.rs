use crate::error::{Error, Result};

/// Floor applied to the reverse-step variance; the posterior variance at
/// `t = 1` is exactly zero.
pub const SIGMA2_FLOOR: f64 = 1e-12;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_ETA_START: f64 = 1e-4;
pub const DEFAULT_ETA_END: f64 = 0.02;

/// Precomputed forward/reverse tables for a `T`-step linear variance schedule.
///
/// Steps are 1-based: `eta(1)..=eta(T)`. `alpha_bar(0)` is defined as 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    eta: Vec<f64>,
    a: Vec<f64>,
    a_bar: Vec<f64>,
    sigma2: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(steps: usize, eta_start: f64, eta_end: f64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::config("steps must be at least 1"));
        }
        if !(eta_start > 0.0) {
            return Err(Error::config(format!("eta_start must be > 0, got {eta_start}")));
        }
        if !(eta_end < 1.0) {
            return Err(Error::config(format!("eta_end must be < 1, got {eta_end}")));
        }
        if !(eta_start <= eta_end) {
            return Err(Error::config(format!(
                "eta_start ({eta_start}) must not exceed eta_end ({eta_end})"
            )));
        }

        let eta: Vec<f64> = if steps == 1 {
            vec![eta_start]
        } else {
            let span = eta_end - eta_start;
            (0..steps)
                .map(|i| eta_start + span * (i as f64) / ((steps - 1) as f64))
                .collect()
        };
        let a: Vec<f64> = eta.iter().map(|e| 1.0 - e).collect();
        let mut a_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for &at in &a {
            acc *= at;
            a_bar.push(acc);
        }
        let sigma2 = (0..steps)
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { a_bar[i - 1] };
                let tilde = eta[i] * (1.0 - prev) / (1.0 - a_bar[i]);
                tilde.max(SIGMA2_FLOOR)
            })
            .collect();

        Ok(Self {
            eta,
            a,
            a_bar,
            sigma2,
        })
    }

    pub fn default_linear(steps: usize) -> Result<Self> {
        Self::linear(steps, DEFAULT_ETA_START, DEFAULT_ETA_END)
    }

    pub fn steps(&self) -> usize {
        self.eta.len()
    }

    #[inline]
    pub fn eta(&self, t: usize) -> f64 {
        self.eta[t - 1]
    }

    #[inline]
    pub fn a(&self, t: usize) -> f64 {
        self.a[t - 1]
    }

    /// Cumulative product up to `t`; `t = 0` gives 1.
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.a_bar[t - 1]
        }
    }

    /// Reverse-step variance for the transition out of step `t`.
    #[inline]
    pub fn sigma2(&self, t: usize) -> f64 {
        self.sigma2[t - 1]
    }

    pub fn etas(&self) -> &[f64] {
        &self.eta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.a_bar
    }

    pub fn sigma2s(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::config(format!(
                "step {t} outside 1..={}",
                self.steps()
            )))
        } else {
            Ok(())
        }
    }
}
