//! Small fully-convolutional noise predictor (`tiny-eps-v1`).
//!
//! ```text
//! emb   = [sin(t f_k) | cos(t f_k)],  f_k = 10000^(-k/31), k = 0..31
//! temb  = W2 silu(W1 emb + b1) + b2
//! h     = conv3x3(x)                              (stem, C -> F)
//! block: u = conv3x3(silu(h)) + (Wt temb + bt)
//!        h = h + conv3x3(silu(u))                 (x2)
//! eps   = conv3x3(silu(h))                        (head, F -> C)
//! ```
//!
//! All convolutions are stride 1 with zero padding. Arithmetic is f32; `t` is
//! the 1-based diffusion step.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::weights::{Tensor, TinyPredictorWeights, RESIDUAL_BLOCKS, TIME_EMBED_DIM};
use super::{DiffusionSchedule, EpsilonPredictor};
use crate::error::{Error, Result};
use crate::image::ImageField;

#[derive(Debug, Clone)]
pub struct TinyPredictor {
    weights: TinyPredictorWeights,
}

#[inline]
fn silu(v: f32) -> f32 {
    v / (1.0 + (-v).exp())
}

pub fn time_embedding(t: f64) -> Vec<f32> {
    let half = TIME_EMBED_DIM / 2;
    let mut out = vec![0.0f32; TIME_EMBED_DIM];
    for k in 0..half {
        let freq = 10000f64.powf(-(k as f64) / (half as f64 - 1.0));
        out[k] = (t * freq).sin() as f32;
        out[half + k] = (t * freq).cos() as f32;
    }
    out
}

fn linear(w: &Tensor, b: &Tensor, x: &[f32]) -> Vec<f32> {
    let (rows, cols) = (w.shape[0], w.shape[1]);
    (0..rows)
        .map(|r| {
            let row = &w.data[r * cols..(r + 1) * cols];
            row.iter().zip(x).fold(b.data[r], |acc, (a, v)| acc + a * v)
        })
        .collect()
}

/// 3x3 same-size convolution, zero padding, planar layout.
fn conv3x3(w: &Tensor, b: &Tensor, input: &[f32], h: usize, wd: usize) -> Vec<f32> {
    let (out_ch, in_ch) = (w.shape[0], w.shape[1]);
    let plane = h * wd;
    let mut out = vec![0.0f32; out_ch * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
        dst.iter_mut().for_each(|v| *v = b.data[o]);
        for i in 0..in_ch {
            let src = &input[i * plane..(i + 1) * plane];
            let k = &w.data[(o * in_ch + i) * 9..(o * in_ch + i + 1) * 9];
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let wv = k[ky * 3 + kx];
                    let y_lo = 1usize.saturating_sub(ky);
                    let y_hi = (h + 1).saturating_sub(ky).min(h);
                    let x_lo = 1usize.saturating_sub(kx);
                    let x_hi = (wd + 1).saturating_sub(kx).min(wd);
                    for y in y_lo..y_hi {
                        let sy = y + ky - 1;
                        let drow = &mut dst[y * wd..(y + 1) * wd];
                        let srow = &src[sy * wd..(sy + 1) * wd];
                        for x in x_lo..x_hi {
                            drow[x] += wv * srow[x + kx - 1];
                        }
                    }
                }
            }
        }
    });
    out
}

impl TinyPredictor {
    pub fn new(weights: TinyPredictorWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Self { weights })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(TinyPredictorWeights::load(path)?)
    }

    pub fn weights(&self) -> &TinyPredictorWeights {
        &self.weights
    }

    /// Raw f32 forward pass on a planar `C x H x W` buffer.
    pub fn forward(&self, x: &[f32], height: usize, width: usize, t: f64) -> Vec<f32> {
        let w = &self.weights;
        let emb = time_embedding(t);
        let hidden = linear(w.tensor("time.linear1.weight"), w.tensor("time.linear1.bias"), &emb);
        let hidden: Vec<f32> = hidden.into_iter().map(silu).collect();
        let temb = linear(w.tensor("time.linear2.weight"), w.tensor("time.linear2.bias"), &hidden);

        let plane = height * width;
        let mut h = conv3x3(w.tensor("stem.weight"), w.tensor("stem.bias"), x, height, width);
        for b in 0..RESIDUAL_BLOCKS {
            let bias = linear(
                w.tensor(&format!("blocks.{b}.time.weight")),
                w.tensor(&format!("blocks.{b}.time.bias")),
                &temb,
            );
            let act: Vec<f32> = h.iter().copied().map(silu).collect();
            let mut u = conv3x3(
                w.tensor(&format!("blocks.{b}.conv1.weight")),
                w.tensor(&format!("blocks.{b}.conv1.bias")),
                &act,
                height,
                width,
            );
            for (c, chunk) in u.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v += bias[c]);
            }
            u.iter_mut().for_each(|v| *v = silu(*v));
            let u = conv3x3(
                w.tensor(&format!("blocks.{b}.conv2.weight")),
                w.tensor(&format!("blocks.{b}.conv2.bias")),
                &u,
                height,
                width,
            );
            h.iter_mut().zip(&u).for_each(|(a, d)| *a += d);
        }
        let act: Vec<f32> = h.into_iter().map(silu).collect();
        conv3x3(w.tensor("head.weight"), w.tensor("head.bias"), &act, height, width)
    }
}

impl EpsilonPredictor for TinyPredictor {
    fn predict(&self, x_t: &ImageField, t: usize, sched: &DiffusionSchedule) -> Result<ImageField> {
        sched.check_step(t)?;
        self.check_shape(x_t.height(), x_t.width(), x_t.channels())?;
        let input: Vec<f32> = x_t.data().iter().map(|&v| v as f32).collect();
        let out = self.forward(&input, x_t.height(), x_t.width(), t as f64);
        let out: Vec<f64> = out.into_iter().map(f64::from).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("tiny predictor produced non-finite output".into()));
        }
        Ok(x_t.with_data(out))
    }

    fn check_shape(&self, _height: usize, _width: usize, channels: usize) -> Result<()> {
        if channels != self.weights.channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} channels", self.weights.channels),
                actual: format!("{channels} channels"),
            });
        }
        Ok(())
    }

    fn native_shape(&self) -> Option<(usize, usize, usize)> {
        None
    }
}

/// Cross-implementation test vectors: flattened planar inputs and outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParityVectors {
    pub inputs: Vec<Vec<f32>>,
    pub t_values: Vec<f64>,
    pub outputs: Vec<Vec<f32>>,
    /// `[channels, height, width]`; square images are assumed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<[usize; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParityReport {
    pub vectors: usize,
    pub max_abs_error: f64,
}

impl ParityVectors {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Codec(format!("parity vectors: {e}")))
    }

    pub fn record(predictor: &TinyPredictor, inputs: Vec<Vec<f32>>, t_values: Vec<f64>, shape: [usize; 3]) -> Self {
        let outputs = inputs
            .iter()
            .zip(&t_values)
            .map(|(x, &t)| predictor.forward(x, shape[1], shape[2], t))
            .collect();
        Self {
            inputs,
            t_values,
            outputs,
            shape: Some(shape),
        }
    }

    pub fn check(&self, predictor: &TinyPredictor) -> Result<ParityReport> {
        if self.inputs.len() != self.t_values.len() || self.inputs.len() != self.outputs.len() {
            return Err(Error::Codec("parity vectors: inputs, t_values and outputs differ in length".into()));
        }
        let channels = predictor.weights().channels;
        let mut max_err = 0.0f64;
        for ((x, &t), y) in self.inputs.iter().zip(&self.t_values).zip(&self.outputs) {
            let [c, h, w] = match self.shape {
                Some(s) => s,
                None => {
                    let side = ((x.len() / channels) as f64).sqrt().round() as usize;
                    [channels, side, side]
                }
            };
            if c != channels || c * h * w != x.len() || y.len() != x.len() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{c}x{h}x{w} planar vectors"),
                    actual: format!("input {} / output {} values", x.len(), y.len()),
                });
            }
            let got = predictor.forward(x, h, w, t);
            for (a, b) in got.iter().zip(y) {
                max_err = max_err.max((f64::from(*a) - f64::from(*b)).abs());
            }
        }
        Ok(ParityReport {
            vectors: self.inputs.len(),
            max_abs_error: max_err,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_endpoints() {
        let e = time_embedding(0.0);
        assert!(e[..32].iter().all(|&v| v == 0.0));
        assert!(e[32..].iter().all(|&v| v == 1.0));
        let e = time_embedding(2.0);
        assert!((e[0] - 2f32.sin()).abs() < 1e-7);
        assert!((e[63] - (2.0 * 1e-4f64).cos() as f32).abs() < 1e-7);
    }

    #[test]
    fn zero_weights_predict_zero() {
        let p = TinyPredictor::new(TinyPredictorWeights::zeros(4, 3)).unwrap();
        let s = DiffusionSchedule::default_linear(10).unwrap();
        let x = ImageField::filled(5, 7, 3, 0.5);
        let eps = p.predict(&x, 3, &s).unwrap();
        assert!(eps.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn any_resolution_accepted() {
        let p = TinyPredictor::new(TinyPredictorWeights::random(4, 1, 2)).unwrap();
        let s = DiffusionSchedule::default_linear(10).unwrap();
        for (h, w) in [(1, 1), (3, 17), (9, 4)] {
            let eps = p.predict(&ImageField::filled(h, w, 1, 0.1), 5, &s).unwrap();
            assert_eq!(eps.shape(), (h, w, 1));
        }
        assert!(p.predict(&ImageField::zeros(2, 2, 3), 5, &s).is_err());
    }
}
