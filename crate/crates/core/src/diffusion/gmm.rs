//! Per-pixel Gaussian-mixture data distribution with an exact noise predictor.

use serde::{Deserialize, Serialize};

use super::{DiffusionSchedule, EpsilonPredictor};
use crate::error::{Error, Result};
use crate::image::{shape_string, ImageField};

/// Component mean: a scalar broadcast to every pixel, or a full field.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanField {
    Scalar(f64),
    Field(ImageField),
}

impl MeanField {
    #[inline]
    fn at(&self, i: usize) -> f64 {
        match self {
            MeanField::Scalar(m) => *m,
            MeanField::Field(f) => f.data()[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: MeanField,
    pub variance: f64,
}

/// Isotropic Gaussian mixture applied independently to every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixturePrior {
    components: Vec<MixtureComponent>,
    shape: Option<(usize, usize, usize)>,
}

impl GaussianMixturePrior {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::config("mixture needs at least one component"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        let mut shape = None;
        for (k, c) in components.iter().enumerate() {
            if !(c.weight >= 0.0) {
                return Err(Error::config(format!("component {k}: weight must be >= 0")));
            }
            if !(c.variance > 0.0) || !c.variance.is_finite() {
                return Err(Error::config(format!("component {k}: variance must be > 0")));
            }
            if let MeanField::Field(f) = &c.mean {
                match shape {
                    None => shape = Some(f.shape()),
                    Some(s) if s != f.shape() => {
                        return Err(Error::ShapeMismatch {
                            expected: shape_string(s),
                            actual: shape_string(f.shape()),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(Self { components, shape })
    }

    /// Single isotropic Gaussian `N(mean, variance)` broadcast to every pixel.
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![MixtureComponent {
            weight: 1.0,
            mean: MeanField::Scalar(mean),
            variance,
        }])
    }

    /// Single Gaussian centred on a full mean image.
    pub fn gaussian_field(mean: ImageField, variance: f64) -> Result<Self> {
        Self::new(vec![MixtureComponent {
            weight: 1.0,
            mean: MeanField::Field(mean),
            variance,
        }])
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    /// Exact posterior mean `E[x_0 | x_t]` per pixel.
    pub fn posterior_mean_x0(&self, x_t: &ImageField, alpha_bar: f64) -> Result<ImageField> {
        self.check_shape(x_t.shape())?;
        let sqrt_ab = alpha_bar.sqrt();
        let k = self.components.len();
        let mut log_r = vec![0.0; k];
        let mut cond = vec![0.0; k];
        let mut dist = vec![0.0; k];
        let out = x_t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let mut best = f64::NEG_INFINITY;
                for (j, comp) in self.components.iter().enumerate() {
                    let m = comp.mean.at(i);
                    let v = alpha_bar * comp.variance + (1.0 - alpha_bar);
                    let d = x - sqrt_ab * m;
                    dist[j] = d * d / v;
                    log_r[j] = comp.weight.ln() - 0.5 * v.ln() - 0.5 * dist[j];
                    cond[j] = m + (sqrt_ab * comp.variance / v) * d;
                    best = best.max(log_r[j]);
                }
                let mut norm = 0.0;
                let mut acc = 0.0;
                if best.is_finite() {
                    for j in 0..k {
                        let w = (log_r[j] - best).exp();
                        norm += w;
                        acc += w * cond[j];
                    }
                }
                if norm > 0.0 && norm.is_finite() && acc.is_finite() {
                    acc / norm
                } else {
                    let nearest = (0..k)
                        .filter(|&j| self.components[j].weight > 0.0)
                        .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))
                        .unwrap_or(0);
                    cond[nearest]
                }
            })
            .collect();
        Ok(x_t.with_data(out))
    }

    fn check_shape(&self, shape: (usize, usize, usize)) -> Result<()> {
        match self.shape {
            Some(native) if native != shape => {
                if native.2 != shape.2 {
                    Err(Error::ShapeMismatch {
                        expected: shape_string(native),
                        actual: shape_string(shape),
                    })
                } else {
                    Err(Error::UnsupportedResolution {
                        height: shape.0,
                        width: shape.1,
                        native_height: native.0,
                        native_width: native.1,
                    })
                }
            }
            _ => Ok(()),
        }
    }
}

impl EpsilonPredictor for GaussianMixturePrior {
    fn predict(&self, x_t: &ImageField, t: usize, sched: &DiffusionSchedule) -> Result<ImageField> {
        sched.check_step(t)?;
        let ab = sched.alpha_bar(t);
        let x0 = self.posterior_mean_x0(x_t, ab)?;
        let sqrt_ab = ab.sqrt();
        let scale = (1.0 - ab).sqrt();
        let eps = x_t
            .data()
            .iter()
            .zip(x0.data())
            .map(|(&x, &m)| (x - sqrt_ab * m) / scale)
            .collect();
        Ok(x_t.with_data(eps))
    }

    fn check_shape(&self, height: usize, width: usize, channels: usize) -> Result<()> {
        GaussianMixturePrior::check_shape(self, (height, width, channels))
    }

    fn native_shape(&self) -> Option<(usize, usize, usize)> {
        self.shape
    }
}

// JSON file: {"components": [{"weight": w, "mean": m, "variance": c}]}
// where `mean` is either a number or {"height", "width", "channels", "data"}.

#[derive(Debug, Serialize, Deserialize)]
struct SpecFile {
    components: Vec<SpecComponent>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SpecComponent {
    weight: f64,
    mean: SpecMean,
    variance: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SpecMean {
    Scalar(f64),
    Field {
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    },
}

impl GaussianMixturePrior {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SpecFile =
            serde_json::from_str(text).map_err(|e| Error::config(format!("mixture spec: {e}")))?;
        let components = spec
            .components
            .into_iter()
            .map(|c| {
                let mean = match c.mean {
                    SpecMean::Scalar(m) => MeanField::Scalar(m),
                    SpecMean::Field {
                        height,
                        width,
                        channels,
                        data,
                    } => MeanField::Field(ImageField::new(height, width, channels, data)?),
                };
                Ok(MixtureComponent {
                    weight: c.weight,
                    mean,
                    variance: c.variance,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    pub fn to_json(&self) -> String {
        let spec = SpecFile {
            components: self
                .components
                .iter()
                .map(|c| SpecComponent {
                    weight: c.weight,
                    mean: match &c.mean {
                        MeanField::Scalar(m) => SpecMean::Scalar(*m),
                        MeanField::Field(f) => SpecMean::Field {
                            height: f.height(),
                            width: f.width(),
                            channels: f.channels(),
                            data: f.data().to_vec(),
                        },
                    },
                    variance: c.variance,
                })
                .collect(),
        };
        serde_json::to_string(&spec).expect("mixture spec serializes")
    }
}
