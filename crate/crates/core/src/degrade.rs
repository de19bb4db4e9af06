//! Synthetic degradations and the RGGB colour-filter mask.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::image::ImageField;
use crate::restoration::{gaussian_kernel, DegradationMask, Kernel2d};
use crate::rng::Stream;

/// How a Bernoulli parameter is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BernoulliReading {
    /// `p` is the probability a pixel is zeroed.
    Drop,
    /// `p` is the probability a pixel is kept.
    Keep,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    Gaussian { sigma: f64 },
    /// Per-pixel standard deviations, one per sample of the image.
    GaussianHetero { sigma: Vec<f64> },
    /// `sigma` columns `< width/2`, `sigma_right` for the rest.
    GaussianSplit { sigma_left: f64, sigma_right: f64 },
    GaussianCorrelated { sigma: f64, kernel_size: usize, kernel_scale: f64 },
    Poisson { lambda: f64 },
    Bernoulli { p: f64, reading: BernoulliReading },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let bad_sigma = |s: f64| !(s >= 0.0) || !s.is_finite();
        match self {
            NoiseSpec::Gaussian { sigma } | NoiseSpec::GaussianCorrelated { sigma, .. } if bad_sigma(*sigma) => {
                Err(Error::config(format!("sigma must be >= 0, got {sigma}")))
            }
            NoiseSpec::GaussianHetero { sigma } if sigma.iter().any(|&s| bad_sigma(s)) => {
                Err(Error::config("sigma map must be finite and >= 0"))
            }
            NoiseSpec::GaussianSplit { sigma_left, sigma_right }
                if bad_sigma(*sigma_left) || bad_sigma(*sigma_right) =>
            {
                Err(Error::config("split sigmas must be >= 0"))
            }
            NoiseSpec::GaussianCorrelated { kernel_size, kernel_scale, .. } => {
                gaussian_kernel(*kernel_size, *kernel_scale).map(|_| ())
            }
            NoiseSpec::Poisson { lambda } if !(*lambda > 0.0) || !lambda.is_finite() => {
                Err(Error::config(format!("poisson lambda must be > 0, got {lambda}")))
            }
            NoiseSpec::Bernoulli { p, .. } if !(*p > 0.0 && *p < 1.0) => {
                Err(Error::config(format!("bernoulli p must be in (0, 1), got {p}")))
            }
            _ => Ok(()),
        }
    }

    /// Count-valued kinds that need intensities in [0, 1].
    pub fn is_count(&self) -> bool {
        matches!(self, NoiseSpec::Poisson { .. } | NoiseSpec::Bernoulli { .. })
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseSpec::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            NoiseSpec::GaussianHetero { sigma } => write!(f, "hetero-map:{} values", sigma.len()),
            NoiseSpec::GaussianSplit { sigma_left, sigma_right } => write!(f, "hetero:{sigma_left},{sigma_right}"),
            NoiseSpec::GaussianCorrelated { sigma, kernel_size, kernel_scale } => {
                write!(f, "correlated:{sigma},{kernel_size},{kernel_scale}")
            }
            NoiseSpec::Poisson { lambda } => write!(f, "poisson:{lambda}"),
            NoiseSpec::Bernoulli { p, reading: BernoulliReading::Drop } => write!(f, "bernoulli:{p}"),
            NoiseSpec::Bernoulli { p, reading: BernoulliReading::Keep } => write!(f, "bernoulli-keep:{p}"),
        }
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    /// `gaussian:0.1 | hetero:0.05,0.3 | correlated:0.1,9,1.0 | poisson:30 | bernoulli:0.2 | bernoulli-keep:0.8`
    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| Error::config(format!("noise spec {s:?} must look like kind:params")))?;
        let nums = args
            .split(',')
            .map(|a| {
                a.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config(format!("noise spec {s:?}: bad number {a:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let arity = |n: usize| {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::config(format!("noise spec {s:?}: {kind} takes {n} parameter(s)")))
            }
        };
        let spec = match kind {
            "gaussian" => {
                arity(1)?;
                NoiseSpec::Gaussian { sigma: nums[0] }
            }
            "hetero" => {
                arity(2)?;
                NoiseSpec::GaussianSplit { sigma_left: nums[0], sigma_right: nums[1] }
            }
            "correlated" => {
                arity(3)?;
                if nums[1].fract() != 0.0 || nums[1] < 1.0 {
                    return Err(Error::config(format!("noise spec {s:?}: kernel size must be a positive integer")));
                }
                NoiseSpec::GaussianCorrelated {
                    sigma: nums[0],
                    kernel_size: nums[1] as usize,
                    kernel_scale: nums[2],
                }
            }
            "poisson" => {
                arity(1)?;
                NoiseSpec::Poisson { lambda: nums[0] }
            }
            "bernoulli" => {
                arity(1)?;
                NoiseSpec::Bernoulli { p: nums[0], reading: BernoulliReading::Drop }
            }
            "bernoulli-keep" => {
                arity(1)?;
                NoiseSpec::Bernoulli { p: nums[0], reading: BernoulliReading::Keep }
            }
            other => return Err(Error::config(format!("unknown noise kind {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Unit-variance spatially-correlated noise: white noise filtered by `k`
/// (zero padding) and divided by `sqrt(sum k^2)`.
pub fn correlated_noise(height: usize, width: usize, channels: usize, k: &Kernel2d, rng: &mut Stream) -> ImageField {
    let r = k.size / 2;
    let (ph, pw) = (height + 2 * r, width + 2 * r);
    let norm = k.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    let mut out = ImageField::zeros(height, width, channels);
    for c in 0..channels {
        let white = rng.normals(ph * pw);
        for y in 0..height {
            for x in 0..width {
                let mut acc = 0.0;
                for ky in 0..k.size {
                    let row = &white[(y + ky) * pw + x..(y + ky) * pw + x + k.size];
                    let krow = &k.weights[ky * k.size..(ky + 1) * k.size];
                    acc += row.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                }
                out.set(c, y, x, acc / norm);
            }
        }
    }
    out
}

/// Apply `spec` to `x0`. Count kinds expect `x0` in [0, 1]; Gaussian kinds
/// work in any range.
pub fn corrupt(x0: &ImageField, spec: &NoiseSpec, rng: &mut Stream) -> Result<ImageField> {
    spec.validate()?;
    if spec.is_count() {
        if let Some(v) = x0.data().iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Domain(format!("{spec} needs intensities in [0, 1], found {v}")));
        }
    }
    let (h, w, c) = x0.shape();
    let out = match spec {
        NoiseSpec::Gaussian { sigma } => x0.map(|v| v + sigma * rng.normal()),
        NoiseSpec::GaussianHetero { sigma } => {
            if sigma.len() != x0.len() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} sigma values", x0.len()),
                    actual: sigma.len().to_string(),
                });
            }
            x0.with_data(x0.data().iter().zip(sigma).map(|(v, s)| v + s * rng.normal()).collect())
        }
        NoiseSpec::GaussianSplit { sigma_left, sigma_right } => {
            let mut y = x0.clone();
            for ch in 0..c {
                for r in 0..h {
                    for x in 0..w {
                        let s = if 2 * x < w { *sigma_left } else { *sigma_right };
                        let i = y.index(ch, r, x);
                        y.data_mut()[i] += s * rng.normal();
                    }
                }
            }
            y
        }
        NoiseSpec::GaussianCorrelated { sigma, kernel_size, kernel_scale } => {
            let k = gaussian_kernel(*kernel_size, *kernel_scale)?;
            let n = correlated_noise(h, w, c, &k, rng);
            x0.with_data(x0.data().iter().zip(n.data()).map(|(v, e)| v + sigma * e).collect())
        }
        NoiseSpec::Poisson { lambda } => {
            let mut y = x0.clone();
            for v in y.data_mut() {
                let rate = lambda * *v;
                *v = if rate > 0.0 {
                    let d = Poisson::new(rate).map_err(|e| Error::Domain(format!("poisson rate {rate}: {e}")))?;
                    d.sample(rng.inner()) / lambda
                } else {
                    0.0
                };
            }
            y
        }
        NoiseSpec::Bernoulli { p, reading } => {
            let drop = match reading {
                BernoulliReading::Drop => *p,
                BernoulliReading::Keep => 1.0 - p,
            };
            x0.map(|v| if rng.uniform() < drop { 0.0 } else { v })
        }
    };
    Ok(out)
}

/// 3-channel RGGB mask: R at (even, even), G at (even, odd) and (odd, even),
/// B at (odd, odd).
pub fn rggb_mask(height: usize, width: usize) -> Result<DegradationMask> {
    if height == 0 || width == 0 || height % 2 == 1 || width % 2 == 1 {
        return Err(Error::config(format!(
            "RGGB mask needs positive even dimensions, got {height}x{width}"
        )));
    }
    let field = ImageField::from_fn(height, width, 3, |c, y, x| {
        let site = match (y % 2, x % 2) {
            (0, 0) => 0,
            (1, 1) => 2,
            _ => 1,
        };
        if site == c {
            1.0
        } else {
            0.0
        }
    });
    DegradationMask::new(field)
}

/// Bayer mosaic of an RGB image: `M * x` with `M = rggb_mask`.
pub fn mosaic(x: &ImageField) -> Result<(ImageField, DegradationMask)> {
    if x.channels() != 3 {
        return Err(Error::ShapeMismatch {
            expected: "3 channels".into(),
            actual: format!("{} channels", x.channels()),
        });
    }
    let mask = rggb_mask(x.height(), x.width())?;
    Ok((mask.apply(x)?, mask))
}
