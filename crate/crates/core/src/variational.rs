//! Mean-field coordinate ascent for the per-step tempered joint
//!
//! `p~(x, phi) = N(y; x, 1/phi)^(1/gamma) Gamma(phi; alpha_t, beta_t) N(x; mu, sigma_t^2)`
//!
//! factorised per pixel as `g(x) = N(mu_hat, sigma2_hat)` and
//! `g(phi) = Gamma(alpha_hat, beta_hat)`. Pixels never interact here.

use crate::error::{Error, Result};
use crate::special::{digamma, gamma_entropy, ln_gamma, LN_2PI};

/// Squared-L2 change of `mu_hat` below which iteration stops.
pub const CAVI_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 50;

/// One reverse step's inference problem over all pixels.
#[derive(Debug, Clone, Copy)]
pub struct StepProblem<'a> {
    pub y: &'a [f64],
    pub mu: &'a [f64],
    pub sigma2_t: f64,
    pub alpha_t: f64,
    pub beta_t: f64,
    pub gamma: f64,
    /// Per-pixel likelihood weight in {0, 1}; `None` means all observed.
    pub observed: Option<&'a [f64]>,
}

impl<'a> StepProblem<'a> {
    pub fn new(
        y: &'a [f64],
        mu: &'a [f64],
        sigma2_t: f64,
        alpha_t: f64,
        beta_t: f64,
        gamma: f64,
    ) -> Result<Self> {
        let p = Self {
            y,
            mu,
            sigma2_t,
            alpha_t,
            beta_t,
            gamma,
            observed: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_observed(mut self, mask: &'a [f64]) -> Result<Self> {
        if mask.len() != self.y.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} mask values", self.y.len()),
                actual: format!("{}", mask.len()),
            });
        }
        self.observed = Some(mask);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.len() != self.mu.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} prior means", self.y.len()),
                actual: format!("{}", self.mu.len()),
            });
        }
        if !(self.sigma2_t > 0.0) {
            return Err(Error::config(format!("sigma2_t must be > 0, got {}", self.sigma2_t)));
        }
        if !(self.alpha_t > 0.0) || !(self.beta_t > 0.0) {
            return Err(Error::config(format!(
                "Gamma prior needs alpha_t, beta_t > 0, got ({}, {})",
                self.alpha_t, self.beta_t
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    #[inline]
    fn weight(&self, i: usize) -> f64 {
        match self.observed {
            Some(m) => m[i],
            None => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    pub mu_hat: Vec<f64>,
    pub sigma2_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaField {
    pub alpha_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
}

impl GammaField {
    /// Uniform shape with rate chosen so that `E(phi) = mean_precision[i]`.
    pub fn from_mean_precision(shape: f64, mean_precision: &[f64]) -> Self {
        Self {
            alpha_hat: vec![shape; mean_precision.len()],
            beta_hat: mean_precision.iter().map(|e| shape / e).collect(),
        }
    }

    /// `E(phi) = alpha_hat / beta_hat`.
    pub fn mean_precision(&self) -> Vec<f64> {
        self.alpha_hat
            .iter()
            .zip(&self.beta_hat)
            .map(|(a, b)| a / b)
            .collect()
    }

    /// Estimated noise variance `1 / E(phi) = beta_hat / alpha_hat`.
    pub fn noise_variance(&self) -> Vec<f64> {
        self.alpha_hat
            .iter()
            .zip(&self.beta_hat)
            .map(|(a, b)| b / a)
            .collect()
    }
}

pub fn update_gx(problem: &StepProblem<'_>, e_phi: &[f64]) -> GaussianField {
    let n = problem.len();
    let s2 = problem.sigma2_t;
    let g = problem.gamma;
    let mut mu_hat = Vec::with_capacity(n);
    let mut sigma2_hat = Vec::with_capacity(n);
    for i in 0..n {
        let e = problem.weight(i) * e_phi[i];
        let denom = e * s2 + g;
        mu_hat.push((s2 * e * problem.y[i] + g * problem.mu[i]) / denom);
        sigma2_hat.push(g * s2 / denom);
    }
    GaussianField { mu_hat, sigma2_hat }
}

pub fn update_gphi(problem: &StepProblem<'_>, gx: &GaussianField) -> GammaField {
    let n = problem.len();
    let two_g = 2.0 * problem.gamma;
    let mut alpha_hat = Vec::with_capacity(n);
    let mut beta_hat = Vec::with_capacity(n);
    for i in 0..n {
        let m = problem.weight(i);
        let r = problem.y[i] - gx.mu_hat[i];
        alpha_hat.push(problem.alpha_t + m * (1.0 / two_g));
        beta_hat.push(problem.beta_t + m * ((r * r + gx.sigma2_hat[i]) / two_g));
    }
    GammaField {
        alpha_hat,
        beta_hat,
    }
}

#[derive(Debug, Clone)]
pub struct CaviOutcome {
    pub gx: GaussianField,
    pub gphi: GammaField,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternate `g(x)` then `g(phi)` updates until the squared-L2 change of
/// `mu_hat` between consecutive sweeps drops below [`CAVI_TOLERANCE`] or
/// `max_iters` is reached.
///
/// The first sweep has no predecessor, so convergence needs at least two;
/// its distance from the prior mean only reflects the initial `E(phi)`.
pub fn cavi(problem: &StepProblem<'_>, init_e_phi: &[f64], max_iters: usize) -> Result<CaviOutcome> {
    problem.validate()?;
    if max_iters < 1 {
        return Err(Error::config("max_iters must be at least 1"));
    }
    if init_e_phi.len() != problem.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} initial precisions", problem.len()),
            actual: format!("{}", init_e_phi.len()),
        });
    }
    if init_e_phi.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::config("initial precision must be finite and > 0"));
    }

    let mut e_phi = init_e_phi.to_vec();
    let mut previous: Option<Vec<f64>> = None;
    let mut iterations = 0;
    loop {
        let gx = update_gx(problem, &e_phi);
        let gphi = update_gphi(problem, &gx);
        iterations += 1;
        if gx.mu_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("CAVI produced a non-finite mean".into()));
        }
        let converged = previous.as_ref().is_some_and(|prev| {
            let change: f64 = gx.mu_hat.iter().zip(prev).map(|(a, b)| (a - b) * (a - b)).sum();
            change < CAVI_TOLERANCE
        });
        if converged || iterations >= max_iters {
            return Ok(CaviOutcome {
                gx,
                gphi,
                iterations,
                converged,
            });
        }
        e_phi = gphi.mean_precision();
        previous = Some(gx.mu_hat);
    }
}

/// Variational free energy `E_g[log p~] + H[g(x)] + H[g(phi)]`, summed over
/// pixels, including every normalising constant of `p~`.
pub fn free_energy(problem: &StepProblem<'_>, gx: &GaussianField, gphi: &GammaField) -> f64 {
    let s2 = problem.sigma2_t;
    let (a0, b0) = (problem.alpha_t, problem.beta_t);
    let prior_phi_const = a0 * b0.ln() - ln_gamma(a0);
    let prior_x_const = -0.5 * (LN_2PI + s2.ln());
    (0..problem.len())
        .map(|i| {
            let m = problem.weight(i);
            let (ah, bh) = (gphi.alpha_hat[i], gphi.beta_hat[i]);
            let e_phi = ah / bh;
            let e_log_phi = digamma(ah) - bh.ln();
            let (mh, vh) = (gx.mu_hat[i], gx.sigma2_hat[i]);
            let r = problem.y[i] - mh;
            let d = mh - problem.mu[i];
            let lik = (m / problem.gamma)
                * (0.5 * e_log_phi - 0.5 * LN_2PI - 0.5 * e_phi * (r * r + vh));
            let prior_phi = prior_phi_const + (a0 - 1.0) * e_log_phi - b0 * e_phi;
            let prior_x = prior_x_const - (d * d + vh) / (2.0 * s2);
            let h_x = 0.5 * (LN_2PI + 1.0 + vh.ln());
            let h_phi = gamma_entropy(ah, bh);
            lik + prior_phi + prior_x + h_x + h_phi
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar<'a>(y: &'a [f64], mu: &'a [f64], s2: f64, a: f64, b: f64, g: f64) -> StepProblem<'a> {
        StepProblem::new(y, mu, s2, a, b, g).unwrap()
    }

    #[test]
    fn gx_direct_substitution() {
        let p = scalar(&[1.0], &[0.0], 1.0, 1.0, 1.0, 1.0);
        let gx = update_gx(&p, &[1.0]);
        assert_eq!(gx.mu_hat, vec![0.5]);
        assert_eq!(gx.sigma2_hat, vec![0.5]);
    }

    #[test]
    fn gx_symmetric_weights() {
        let (y, mu) = ([0.8, -0.2], [0.1, 0.4]);
        let p = scalar(&y, &mu, 0.3, 1.0, 1.0, 0.3);
        let gx = update_gx(&p, &[1.0, 1.0]);
        for i in 0..2 {
            assert!((gx.mu_hat[i] - (y[i] + mu[i]) / 2.0).abs() < 1e-15);
            assert!((gx.sigma2_hat[i] - 0.15).abs() < 1e-15);
        }
    }

    #[test]
    fn gx_infinite_precision_limit() {
        let p = scalar(&[0.9], &[-0.3], 0.01, 1.0, 1.0, 0.2);
        let gx = update_gx(&p, &[1e12]);
        assert!((gx.mu_hat[0] - 0.9).abs() < 1e-10);
        assert!(gx.sigma2_hat[0] < 1e-12);
    }

    #[test]
    fn gphi_default_hyperparameters() {
        let p = scalar(&[0.1, -0.5], &[0.0, 0.0], 0.01, 1.0, 0.03, 0.2);
        let gx = GaussianField {
            mu_hat: vec![0.0, 0.0],
            sigma2_hat: vec![0.01, 0.01],
        };
        let gphi = update_gphi(&p, &gx);
        assert!(gphi.alpha_hat.iter().all(|&a| a == 3.5));
        assert!((gphi.beta_hat[0] - 0.08).abs() < 1e-15);
        assert!((gphi.mean_precision()[0] - 43.75).abs() < 1e-11);
    }

    #[test]
    fn gphi_conjugate_update() {
        let p = scalar(&[0.4], &[0.0], 0.01, 2.0, 0.5, 1.0);
        let gx = GaussianField {
            mu_hat: vec![0.1],
            sigma2_hat: vec![0.0],
        };
        let gphi = update_gphi(&p, &gx);
        assert_eq!(gphi.alpha_hat[0], 2.5);
        assert_eq!(gphi.beta_hat[0], 0.5 + 0.3f64 * 0.3 / 2.0);
    }

    #[test]
    fn zero_residual_fixed_after_one_update() {
        let y = [0.3, -0.7, 0.0];
        let p = scalar(&y, &y, 0.02, 1.0, 0.01, 0.2);
        for init in [0.1, 1.0, 10.0] {
            let first = update_gx(&p, &[init; 3]);
            for i in 0..3 {
                assert!((first.mu_hat[i] - y[i]).abs() < 1e-15);
            }
            let out = cavi(&p, &[init; 3], 50).unwrap();
            assert_eq!(out.iterations, 2);
            assert!(out.converged);
            for i in 0..3 {
                assert!((out.gx.mu_hat[i] - y[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn non_convergence_is_flagged_not_failed() {
        let p = scalar(&[0.9; 64], &[-0.9; 64], 0.05, 1.0, 1e-3, 0.05);
        let out = cavi(&p, &[1e6; 64], 1).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(!out.converged);
    }

    #[test]
    fn masked_pixels_keep_prior() {
        let y = [0.5, 0.5];
        let mu = [0.0, 0.0];
        let mask = [1.0, 0.0];
        let p = scalar(&y, &mu, 0.02, 1.0, 0.01, 0.2)
            .with_observed(&mask)
            .unwrap();
        let out = cavi(&p, &[1.0, 1.0], 50).unwrap();
        assert_eq!(out.gx.mu_hat[1], 0.0);
        assert_eq!(out.gx.sigma2_hat[1], 0.02);
        assert_eq!(out.gphi.alpha_hat[1], 1.0);
        assert_eq!(out.gphi.beta_hat[1], 0.01);
        assert!(out.gx.mu_hat[0] > 0.0);
    }

    #[test]
    fn invalid_problems_rejected() {
        assert!(StepProblem::new(&[0.0], &[0.0], 0.0, 1.0, 1.0, 0.2).is_err());
        assert!(StepProblem::new(&[0.0], &[0.0], 1.0, 1.0, 1.0, 1.5).is_err());
        assert!(StepProblem::new(&[0.0], &[0.0, 1.0], 1.0, 1.0, 1.0, 0.5).is_err());
        let p = scalar(&[0.0], &[0.0], 1.0, 1.0, 1.0, 1.0);
        assert!(cavi(&p, &[0.0], 5).is_err());
        assert!(cavi(&p, &[1.0], 0).is_err());
    }
}
