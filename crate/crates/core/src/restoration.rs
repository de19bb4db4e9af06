//! Reverse-diffusion restoration driver.
//!
//! Each reverse step `t = T..1`:
//!
//! 1. `mu = mu_theta(x_t, t)`
//! 2. re-corrupt the observation: `y_{t-1} = sqrt(abar_{t-1}) y_0 + sqrt(1 - abar_{t-1}) eps`
//! 3. CAVI on the tempered joint with prior `Gamma(alpha, beta * abar_{t-1})`,
//!    warm-started from the previous step's precision
//! 4. optionally smooth the variance map `1 / E(phi)` with a Gaussian kernel
//! 5. `x_{t-1} = pi y_{t-1} + (1 - pi) mu`, `pi = M s2 / (M s2 + var)`

use serde::Serialize;

use crate::diffusion::{mu_theta, DiffusionSchedule, EpsilonPredictor};
use crate::error::{Error, Result};
use crate::image::{shape_string, ImageField};
use crate::rng::{Purpose, SplitRng, Stream};
use crate::variational::{cavi, StepProblem, DEFAULT_MAX_ITERS};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_GAMMA: f64 = 0.2;
pub const DEFAULT_KERNEL_SIZE: usize = 9;
pub const DEFAULT_SEED: u64 = 42;

/// How the precision estimate is carried from one reverse step to the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmStart {
    /// `E(phi_{t-1}) <- E(phi_t) * abar_t / abar_{t-1}`.
    Rescaled,
    /// Reuse the previous estimate unchanged.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestorationConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kernel_size: usize,
    pub kernel_scale: f64,
    pub steps: usize,
    pub eta_start: f64,
    pub eta_end: f64,
    pub seed: u64,
    pub enable_ale: bool,
    pub enable_rectify: bool,
    pub warm_start: WarmStart,
    pub max_cavi_iters: usize,
    /// Drop the likelihood at unobserved pixels inside CAVI (demosaicing).
    pub mask_cavi: bool,
}

impl RestorationConfig {
    /// Defaults for everything except the dataset-dependent `beta` and `s`.
    pub fn new(beta: f64, kernel_scale: f64) -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta,
            gamma: DEFAULT_GAMMA,
            kernel_size: DEFAULT_KERNEL_SIZE,
            kernel_scale,
            steps: crate::diffusion::schedule::DEFAULT_STEPS,
            eta_start: crate::diffusion::schedule::DEFAULT_ETA_START,
            eta_end: crate::diffusion::schedule::DEFAULT_ETA_END,
            seed: DEFAULT_SEED,
            enable_ale: true,
            enable_rectify: true,
            warm_start: WarmStart::Rescaled,
            max_cavi_iters: DEFAULT_MAX_ITERS,
            mask_cavi: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::config(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::config(format!(
                "kernel size must be odd and >= 1, got {}",
                self.kernel_size
            )));
        }
        if !(self.kernel_scale > 0.0) || !self.kernel_scale.is_finite() {
            return Err(Error::config(format!(
                "kernel scale must be > 0, got {}",
                self.kernel_scale
            )));
        }
        if self.max_cavi_iters == 0 {
            return Err(Error::config("max CAVI iterations must be >= 1"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.steps, self.eta_start, self.eta_end)
    }
}

/// Binary observation mask, same shape as the image.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationMask {
    field: ImageField,
}

impl DegradationMask {
    pub fn new(field: ImageField) -> Result<Self> {
        if let Some(v) = field.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::config(format!("mask values must be 0 or 1, found {v}")));
        }
        if field.data().iter().all(|&v| v == 0.0) {
            return Err(Error::config("mask has no observed pixels"));
        }
        Ok(Self { field })
    }

    pub fn all_ones(height: usize, width: usize, channels: usize) -> Self {
        Self {
            field: ImageField::filled(height, width, channels, 1.0),
        }
    }

    pub fn field(&self) -> &ImageField {
        &self.field
    }

    pub fn data(&self) -> &[f64] {
        self.field.data()
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.field.data()[i] != 0.0
    }

    /// `M * x`.
    pub fn apply(&self, x: &ImageField) -> Result<ImageField> {
        self.field.ensure_same_shape(x)?;
        Ok(x.with_data(
            x.data()
                .iter()
                .zip(self.data())
                .map(|(v, m)| v * m)
                .collect(),
        ))
    }
}

/// `y_t = sqrt(abar_t) y_0 + sqrt(1 - abar_t) eps` with fresh `eps`.
pub fn recorrupt(y0: &ImageField, sched: &DiffusionSchedule, t: usize, rng: &mut Stream) -> ImageField {
    if t == 0 {
        return y0.clone();
    }
    let ab = sched.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    y0.with_data(y0.data().iter().map(|&v| s * v + n * rng.normal()).collect())
}

/// Step-scaled Gamma prior `(alpha, beta * abar_t)`.
pub fn gamma_prior_at(config: &RestorationConfig, sched: &DiffusionSchedule, t: usize) -> (f64, f64) {
    (config.alpha, config.beta * sched.alpha_bar(t))
}

/// Normalised 1-D Gaussian taps, `exp(-i^2 / (2 s^2))` on `-(l/2)..=l/2`.
pub fn gaussian_kernel_1d(size: usize, scale: f64) -> Vec<f64> {
    let r = (size / 2) as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * scale * scale)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / total).collect()
}

/// `l x l` normalised Gaussian kernel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2d {
    pub size: usize,
    pub weights: Vec<f64>,
}

impl Kernel2d {
    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = (self.size / 2) as isize;
        self.weights[((dy + r) as usize) * self.size + (dx + r) as usize]
    }
}

pub fn gaussian_kernel(size: usize, scale: f64) -> Result<Kernel2d> {
    if size.is_multiple_of(2) {
        return Err(Error::config(format!("kernel size must be odd and >= 1, got {size}")));
    }
    if !(scale > 0.0) {
        return Err(Error::config(format!("kernel scale must be > 0, got {scale}")));
    }
    let r = (size / 2) as isize;
    let mut weights = Vec::with_capacity(size * size);
    for i in -r..=r {
        for j in -r..=r {
            weights.push((-((i * i + j * j) as f64) / (2.0 * scale * scale)).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(Kernel2d { size, weights })
}

/// One separable pass with replicate padding. Written as
/// `v_i + sum_k w_k (v_{i+k} - v_i)` so constant signals pass through exactly.
fn blur_pass(src: &[f64], dst: &mut [f64], len: usize, stride: usize, count: usize, line_step: usize, taps: &[f64]) {
    let r = (taps.len() / 2) as isize;
    for line in 0..count {
        let base = line * line_step;
        for i in 0..len {
            let centre = src[base + i * stride];
            let mut acc = 0.0;
            for (k, w) in taps.iter().enumerate() {
                let j = (i as isize + k as isize - r).clamp(0, len as isize - 1) as usize;
                acc += w * (src[base + j * stride] - centre);
            }
            dst[base + i * stride] = centre + acc;
        }
    }
}

/// Separable Gaussian smoothing of each channel with replicate padding.
pub fn gaussian_blur(field: &ImageField, size: usize, scale: f64) -> Result<ImageField> {
    gaussian_kernel(size, scale)?;
    let taps = gaussian_kernel_1d(size, scale);
    let (h, w, c) = field.shape();
    let plane = h * w;
    let mut tmp = vec![0.0; field.len()];
    let mut out = vec![0.0; field.len()];
    for ch in 0..c {
        let off = ch * plane;
        // rows, then columns
        blur_pass(&field.data()[off..off + plane], &mut tmp[off..off + plane], w, 1, h, w, &taps);
        blur_pass(&tmp[off..off + plane], &mut out[off..off + plane], h, w, w, 1, &taps);
    }
    Ok(field.with_data(out))
}

/// Gaussian smoothing of a positive per-pixel variance map.
pub fn rectify_variance(var_map: &ImageField, size: usize, scale: f64) -> Result<ImageField> {
    if var_map.data().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("variance map must be strictly positive".into()));
    }
    let out = gaussian_blur(var_map, size, scale)?;
    Ok(out.map(|v| v.max(f64::MIN_POSITIVE)))
}

/// `x* = pi y + (1 - pi) mu` with `pi = M s2 / (M s2 + var)`.
pub fn map_combine(
    y: &ImageField,
    mu: &ImageField,
    sigma2_t: f64,
    var_est: &[f64],
    mask: Option<&DegradationMask>,
) -> Result<ImageField> {
    y.ensure_same_shape(mu)?;
    if var_est.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} variances", y.len()),
            actual: var_est.len().to_string(),
        });
    }
    if let Some(m) = mask {
        m.field().ensure_same_shape(y)?;
    }
    let data = (0..y.len())
        .map(|i| {
            let s2 = match mask {
                Some(m) => m.data()[i] * sigma2_t,
                None => sigma2_t,
            };
            let pi = s2 / (s2 + var_est[i]);
            pi * y.data()[i] + (1.0 - pi) * mu.data()[i]
        })
        .collect();
    Ok(y.with_data(data))
}

/// Robust white-noise variance estimate from first differences:
/// `(1.4826 * MAD(d))^2 / 2` over horizontal and vertical neighbours.
pub fn estimate_noise_variance(y: &ImageField) -> f64 {
    let (h, w, c) = y.shape();
    let mut d = Vec::with_capacity(2 * y.len());
    for ch in 0..c {
        for r in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    d.push(y.get(ch, r, x + 1) - y.get(ch, r, x));
                }
                if r + 1 < h {
                    d.push(y.get(ch, r + 1, x) - y.get(ch, r, x));
                }
            }
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let med = median(&mut d.clone());
    let mut dev: Vec<f64> = d.iter().map(|v| (v - med).abs()).collect();
    let sd = 1.4826 * median(&mut dev);
    sd * sd / 2.0
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// What one reverse step computed; handed to an observer.
#[derive(Debug)]
pub struct StepRecord<'a> {
    pub t: usize,
    pub mu: &'a ImageField,
    pub y_prev: &'a ImageField,
    /// Raw `1 / E(phi_{t-1})` before smoothing.
    pub noise_variance: &'a [f64],
    /// Variance that entered the MAP weight.
    pub combined_variance: &'a [f64],
    pub x_prev: &'a ImageField,
    pub cavi_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Restoration {
    /// `x_0` clamped to [-1, 1].
    pub image: ImageField,
    /// Final `1 / E(phi_0) = beta_hat_0 / alpha_hat_0`.
    pub noise_variance: ImageField,
    pub cavi_iterations: usize,
    pub unconverged_steps: usize,
}

pub fn denoise(y0: &ImageField, predictor: &dyn EpsilonPredictor, config: &RestorationConfig) -> Result<Restoration> {
    run(y0, None, predictor, config, &mut |_| {})
}

pub fn denoise_observed(
    y0: &ImageField,
    predictor: &dyn EpsilonPredictor,
    config: &RestorationConfig,
    observer: &mut dyn FnMut(&StepRecord<'_>),
) -> Result<Restoration> {
    run(y0, None, predictor, config, observer)
}

/// Restoration of `y0 = M * x0`; unobserved pixels follow the prior mean.
pub fn demosaic(
    y0: &ImageField,
    mask: &DegradationMask,
    predictor: &dyn EpsilonPredictor,
    config: &RestorationConfig,
) -> Result<Restoration> {
    run(y0, Some(mask), predictor, config, &mut |_| {})
}

pub fn demosaic_observed(
    y0: &ImageField,
    mask: &DegradationMask,
    predictor: &dyn EpsilonPredictor,
    config: &RestorationConfig,
    observer: &mut dyn FnMut(&StepRecord<'_>),
) -> Result<Restoration> {
    run(y0, Some(mask), predictor, config, observer)
}

fn run(
    y0: &ImageField,
    mask: Option<&DegradationMask>,
    predictor: &dyn EpsilonPredictor,
    config: &RestorationConfig,
    observer: &mut dyn FnMut(&StepRecord<'_>),
) -> Result<Restoration> {
    config.validate()?;
    let sched = config.schedule()?;
    let (h, w, c) = y0.shape();
    predictor
        .check_shape(h, w, c)
        .map_err(|e| Error::config(format!("input {} rejected by prior: {e}", shape_string(y0.shape()))))?;
    if let Some(m) = mask {
        m.field().ensure_same_shape(y0)?;
    }
    let cavi_mask = if config.mask_cavi { mask.map(|m| m.data()) } else { None };

    let rng = SplitRng::new(config.seed);
    let n = y0.len();
    let mut x = ImageField::new(h, w, c, rng.stream(Purpose::InitialState, 0).normals(n))?;
    let mut e_phi = vec![1.0; n];
    let mut noise_var = vec![config.beta / config.alpha; n];
    let mut total_iters = 0;
    let mut unconverged = 0;
    let total = sched.steps();

    for t in (1..=total).rev() {
        let mu = mu_theta(predictor, &sched, &x, t)?;
        let mut stream = rng.stream(Purpose::Recorrupt, t as u64);
        let y_prev = recorrupt(y0, &sched, t - 1, &mut stream);
        let sigma2 = sched.sigma2(t);
        let (alpha_t, beta_t) = gamma_prior_at(config, &sched, t - 1);

        let (iters, converged) = if config.enable_ale {
            if t < total && config.warm_start == WarmStart::Rescaled {
                let ratio = sched.alpha_bar(t) / sched.alpha_bar(t - 1);
                e_phi.iter_mut().for_each(|e| *e *= ratio);
            }
            let mut problem = StepProblem::new(y_prev.data(), mu.data(), sigma2, alpha_t, beta_t, config.gamma)
                .map_err(|e| e.at_step(t))?;
            if let Some(m) = cavi_mask {
                problem = problem.with_observed(m)?;
            }
            let out = cavi(&problem, &e_phi, config.max_cavi_iters).map_err(|e| e.at_step(t))?;
            e_phi = out.gphi.mean_precision();
            noise_var = out.gphi.noise_variance();
            (out.iterations, out.converged)
        } else {
            e_phi.iter_mut().for_each(|e| *e = alpha_t / beta_t);
            noise_var.iter_mut().for_each(|v| *v = beta_t / alpha_t);
            (0, true)
        };
        total_iters += iters;
        if !converged {
            unconverged += 1;
        }

        let combined = if config.enable_rectify {
            rectify_variance(&y0.with_data(noise_var.clone()), config.kernel_size, config.kernel_scale)?.into_data()
        } else {
            noise_var.clone()
        };
        let x_prev = map_combine(&y_prev, &mu, sigma2, &combined, mask)?;
        if x_prev.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite reverse-step state".into()).at_step(t));
        }
        observer(&StepRecord {
            t,
            mu: &mu,
            y_prev: &y_prev,
            noise_variance: &noise_var,
            combined_variance: &combined,
            x_prev: &x_prev,
            cavi_iterations: iters,
            converged,
        });
        x = x_prev;
    }

    Ok(Restoration {
        image: x.clamp(-1.0, 1.0),
        noise_variance: y0.with_data(noise_var),
        cavi_iterations: total_iters,
        unconverged_steps: unconverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_edge_cases() {
        assert_eq!(gaussian_kernel(1, 0.3).unwrap().weights, vec![1.0]);
        let flat = gaussian_kernel(3, 1e6).unwrap();
        assert!(flat.weights.iter().all(|w| (w - 1.0 / 9.0).abs() < 1e-6));
        assert!(gaussian_kernel(4, 1.0).is_err());
        assert!(gaussian_kernel(3, 0.0).is_err());
        let k = gaussian_kernel(9, 0.6).unwrap();
        assert!((k.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rectify_constant_is_exact() {
        let v = ImageField::filled(7, 11, 2, 0.0123);
        let out = rectify_variance(&v, 9, 1.3).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0123));
    }

    #[test]
    fn rectify_impulse_gives_kernel() {
        let (h, w) = (21, 21);
        let mut v = ImageField::filled(h, w, 1, 1.0);
        v.set(0, 10, 10, 2.0);
        let out = rectify_variance(&v, 5, 0.8).unwrap();
        let k = gaussian_kernel(5, 0.8).unwrap();
        for dy in -2isize..=2 {
            for dx in -2isize..=2 {
                let got = out.get(0, (10 + dy) as usize, (10 + dx) as usize) - 1.0;
                assert!((got - k.at(dy, dx)).abs() < 1e-14);
            }
        }
        assert_eq!(out.get(0, 0, 0), 1.0);
    }

    #[test]
    fn rectify_rejects_nonpositive() {
        assert!(rectify_variance(&ImageField::zeros(2, 2, 1), 3, 1.0).is_err());
    }

    #[test]
    fn map_combine_limits() {
        let y = ImageField::filled(1, 3, 1, 0.8);
        let mu = ImageField::filled(1, 3, 1, -0.2);
        let s2 = 0.01;
        let x = map_combine(&y, &mu, s2, &[1e-300, 1e300, s2], None).unwrap();
        assert!((x.data()[0] - 0.8).abs() < 1e-15);
        assert!((x.data()[1] + 0.2).abs() < 1e-15);
        assert!((x.data()[2] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn map_combine_masked_takes_prior() {
        let y = ImageField::filled(1, 2, 1, 0.8);
        let mu = ImageField::filled(1, 2, 1, -0.2);
        let mask = DegradationMask::new(ImageField::new(1, 2, 1, vec![1.0, 0.0]).unwrap()).unwrap();
        let x = map_combine(&y, &mu, 0.01, &[0.01, 0.01], Some(&mask)).unwrap();
        assert_eq!(x.data()[1], -0.2);
        assert!((x.data()[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn gamma_prior_endpoints() {
        let cfg = RestorationConfig::new(0.03, 0.6);
        let s = cfg.schedule().unwrap();
        assert_eq!(gamma_prior_at(&cfg, &s, 0), (1.0, 0.03));
        let (a, b) = gamma_prior_at(&cfg, &s, 1000);
        assert_eq!(a, 1.0);
        assert!(b < 0.03 * 0.01);
    }

    #[test]
    fn gamma_prior_half_alpha_bar() {
        let cfg = RestorationConfig::new(0.03, 0.6);
        let s = cfg.schedule().unwrap();
        let t = (1..=1000).find(|&t| s.alpha_bar(t) < 0.5).unwrap();
        let (_, b) = gamma_prior_at(&cfg, &s, t);
        assert!((b - 0.03 * s.alpha_bar(t)).abs() < 1e-18);
        assert!((b - 0.015).abs() < 0.0002);
    }

    #[test]
    fn recorrupt_t0_is_identity() {
        let s = DiffusionSchedule::default_linear(10).unwrap();
        let y = ImageField::filled(2, 2, 1, 0.4);
        let mut rng = SplitRng::new(1).stream(Purpose::Test, 0);
        assert_eq!(recorrupt(&y, &s, 0, &mut rng), y);
    }

    #[test]
    fn config_validation() {
        let mut c = RestorationConfig::new(0.01, 1.0);
        assert!(c.validate().is_ok());
        c.kernel_size = 8;
        assert!(c.validate().is_err());
        let mut c = RestorationConfig::new(0.0, 1.0);
        assert!(c.validate().is_err());
        c.beta = 0.1;
        c.gamma = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mask_validation() {
        assert!(DegradationMask::new(ImageField::zeros(2, 2, 1)).is_err());
        assert!(DegradationMask::new(ImageField::filled(2, 2, 1, 0.5)).is_err());
    }

    #[test]
    fn noise_estimate_on_white_noise() {
        let mut s = SplitRng::new(9).stream(Purpose::Test, 0);
        let y = ImageField::from_fn(64, 64, 1, |_, _, _| 0.1 * s.normal());
        let v = estimate_noise_variance(&y);
        assert!((v / 0.01 - 1.0).abs() < 0.1, "{v}");
    }
}
