//! Diffusion schedule, noise predictors, and the reverse-process mean.

pub mod gmm;
pub mod schedule;
pub mod tiny;
pub mod weights;

pub use gmm::{GaussianMixturePrior, MeanField, MixtureComponent};
pub use schedule::DiffusionSchedule;
pub use tiny::{ParityReport, ParityVectors, TinyPredictor};
pub use weights::TinyPredictorWeights;

use crate::error::{Error, Result};
use crate::image::ImageField;
use crate::rng::{Purpose, SplitRng};

/// A noise predictor `eps(x_t, t)` for a variance-preserving diffusion.
pub trait EpsilonPredictor: Send + Sync {
    fn predict(&self, x_t: &ImageField, t: usize, sched: &DiffusionSchedule) -> Result<ImageField>;

    /// Reject image shapes this predictor cannot run on.
    fn check_shape(&self, height: usize, width: usize, channels: usize) -> Result<()>;

    /// `Some(shape)` for predictors tied to one resolution.
    fn native_shape(&self) -> Option<(usize, usize, usize)>;
}

/// Which noise predictor to build: `gauss:c=<var>[,m=<mean>]`,
/// `gmm:<json file>` or `tiny:<weights file>`.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSelector {
    Gauss { variance: f64, mean: f64 },
    Gmm(std::path::PathBuf),
    Tiny(std::path::PathBuf),
}

impl std::str::FromStr for PriorSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::config(format!("prior {s:?} must be gauss:c=<v>, gmm:<file> or tiny:<file>")))?;
        match kind {
            "gauss" => {
                let (mut variance, mut mean) = (None, 0.0);
                for part in rest.split(',') {
                    let (k, v) = part
                        .split_once('=')
                        .ok_or_else(|| Error::config(format!("prior {s:?}: expected key=value, got {part:?}")))?;
                    let v: f64 = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::config(format!("prior {s:?}: bad number {v:?}")))?;
                    match k.trim() {
                        "c" => variance = Some(v),
                        "m" => mean = v,
                        other => return Err(Error::config(format!("prior {s:?}: unknown key {other:?}"))),
                    }
                }
                let variance = variance.ok_or_else(|| Error::config(format!("prior {s:?}: missing c=<variance>")))?;
                if !(variance > 0.0) || !mean.is_finite() {
                    return Err(Error::config(format!("prior {s:?}: need c > 0 and finite m")));
                }
                Ok(PriorSelector::Gauss { variance, mean })
            }
            "gmm" if !rest.is_empty() => Ok(PriorSelector::Gmm(rest.into())),
            "tiny" if !rest.is_empty() => Ok(PriorSelector::Tiny(rest.into())),
            _ => Err(Error::config(format!("unknown prior selector {s:?}"))),
        }
    }
}

impl std::fmt::Display for PriorSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PriorSelector::Gauss { variance, mean } => write!(f, "gauss:c={variance},m={mean}"),
            PriorSelector::Gmm(p) => write!(f, "gmm:{}", p.display()),
            PriorSelector::Tiny(p) => write!(f, "tiny:{}", p.display()),
        }
    }
}

impl PriorSelector {
    pub fn build(&self) -> Result<Box<dyn EpsilonPredictor>> {
        Ok(match self {
            PriorSelector::Gauss { variance, mean } => Box::new(GaussianMixturePrior::gaussian(*mean, *variance)?),
            PriorSelector::Gmm(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Box::new(GaussianMixturePrior::from_json(&text)?)
            }
            PriorSelector::Tiny(path) => Box::new(TinyPredictor::load(path)?),
        })
    }

    /// Channel count the prior implies when nothing else fixes it.
    pub fn default_channels(&self, predictor: &dyn EpsilonPredictor) -> usize {
        match predictor.native_shape() {
            Some((_, _, c)) => c,
            None => match self {
                PriorSelector::Gauss { .. } | PriorSelector::Gmm(_) => 1,
                PriorSelector::Tiny(_) => 3,
            },
        }
    }
}

/// Reverse-process mean
/// `(x_t - eta_t / sqrt(1 - abar_t) * eps(x_t, t)) / sqrt(a_t)`.
pub fn mu_theta(
    predictor: &dyn EpsilonPredictor,
    sched: &DiffusionSchedule,
    x_t: &ImageField,
    t: usize,
) -> Result<ImageField> {
    sched.check_step(t)?;
    let eps = predictor
        .predict(x_t, t, sched)
        .map_err(|e| e.at_step(t))?;
    x_t.ensure_same_shape(&eps).map_err(|e| e.at_step(t))?;
    Ok(mean_from_epsilon(sched, x_t, &eps, t))
}

pub fn mean_from_epsilon(
    sched: &DiffusionSchedule,
    x_t: &ImageField,
    eps: &ImageField,
    t: usize,
) -> ImageField {
    let coef = sched.eta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv_sqrt_a = 1.0 / sched.a(t).sqrt();
    let data = x_t
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| (x - coef * e) * inv_sqrt_a)
        .collect();
    x_t.with_data(data)
}

/// `x0_hat = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)`.
pub fn predicted_x0(
    sched: &DiffusionSchedule,
    x_t: &ImageField,
    eps: &ImageField,
    t: usize,
) -> ImageField {
    let ab = sched.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x_t
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| (x - n * e) / s)
        .collect();
    x_t.with_data(data)
}

/// Ancestral sampling from `x_T ~ N(0, I)`; no noise is added at `t = 1`.
pub fn sample_unconditional(
    predictor: &dyn EpsilonPredictor,
    sched: &DiffusionSchedule,
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
) -> Result<ImageField> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::config("sample dimensions must be positive"));
    }
    predictor.check_shape(height, width, channels)?;
    let rng = SplitRng::new(seed);
    let n = height * width * channels;
    let mut x = ImageField::new(
        height,
        width,
        channels,
        rng.stream(Purpose::InitialState, 0).normals(n),
    )?;
    for t in (1..=sched.steps()).rev() {
        let mut mean = mu_theta(predictor, sched, &x, t)?;
        if t > 1 {
            let sd = sched.sigma2(t).sqrt();
            let mut z = rng.stream(Purpose::Ancestral, t as u64);
            for v in mean.data_mut() {
                *v += sd * z.normal();
            }
        }
        x = mean;
    }
    Ok(x)
}
