//! Synthetic suites and brute-force references shared by the test targets.
#![allow(dead_code, clippy::needless_range_loop)]

use diffvi::degrade::correlated_noise;
use diffvi::diffusion::GaussianMixturePrior;
use diffvi::metrics::psnr;
use diffvi::restoration::{denoise, gaussian_blur, gaussian_kernel, RestorationConfig};
use diffvi::rng::{Purpose, SplitRng};
use diffvi::ImageField;

pub const SUITE_SIZE: usize = 32;
pub const SUITE_PRIOR_VARIANCE: f64 = 0.02;

/// A clean image drawn from a known per-pixel Gaussian prior, plus its
/// observation.
pub struct Case {
    pub clean: ImageField,
    pub noisy: ImageField,
    pub prior: GaussianMixturePrior,
    pub noise_sd: ImageField,
}

/// Smooth field in [-0.6, 0.6]: blurred white noise, scaled by 3 and clipped.
pub fn smooth_mean(n: usize, seed: u64) -> ImageField {
    let mut s = SplitRng::new(seed).stream(Purpose::Test, 1);
    let white = ImageField::new(n, n, 1, s.normals(n * n)).unwrap();
    gaussian_blur(&white, 25, 3.0).unwrap().map(|v| (3.0 * v).clamp(-0.6, 0.6))
}

fn draw_clean(n: usize, c: f64, seed: u64) -> (ImageField, ImageField) {
    let m = smooth_mean(n, seed);
    let mut s = SplitRng::new(seed).stream(Purpose::Test, 2);
    let x0 = m.map(|v| v + c.sqrt() * s.normal());
    (m, x0)
}

#[derive(Clone, Copy, Debug)]
pub enum SuiteNoise {
    /// Left half `sd_left`, right half `sd_right`.
    Split(f64, f64),
    /// Unit-variance correlated noise from a 9x9 kernel with scale 1, times `sd`.
    Correlated(f64),
    White(f64),
}

pub fn make_case(noise: SuiteNoise, prior_var: f64, seed: u64) -> Case {
    let n = SUITE_SIZE;
    let (m, x0) = draw_clean(n, prior_var, seed);
    let mut s = SplitRng::new(seed).stream(Purpose::Test, 3);
    let (noisy, sd) = match noise {
        SuiteNoise::Split(l, r) => {
            let sd = ImageField::from_fn(n, n, 1, |_, _, x| if 2 * x < n { l } else { r });
            let y = x0.with_data(x0.data().iter().zip(sd.data()).map(|(v, d)| v + d * s.normal()).collect());
            (y, sd)
        }
        SuiteNoise::Correlated(d) => {
            let k = gaussian_kernel(9, 1.0).unwrap();
            let e = correlated_noise(n, n, 1, &k, &mut s);
            let y = x0.with_data(x0.data().iter().zip(e.data()).map(|(v, e)| v + d * e).collect());
            (y, ImageField::filled(n, n, 1, d))
        }
        SuiteNoise::White(d) => (x0.map(|v| v + d * s.normal()), ImageField::filled(n, n, 1, d)),
    };
    Case {
        clean: x0,
        noisy,
        prior: GaussianMixturePrior::gaussian_field(m, prior_var).unwrap(),
        noise_sd: sd,
    }
}

pub fn suite(noise: SuiteNoise, count: usize) -> Vec<Case> {
    (0..count as u64).map(|i| make_case(noise, SUITE_PRIOR_VARIANCE, 100 + i)).collect()
}

/// Mean PSNR (model range, peak 2) of `denoise` over a suite; image `i` uses seed `i`.
pub fn mean_psnr(cases: &[Case], config: &RestorationConfig) -> f64 {
    let total: f64 = cases
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut cfg = config.clone();
            cfg.seed = i as u64;
            let out = denoise(&c.noisy, &c.prior, &cfg).unwrap();
            psnr(&c.clean, &out.image, 2.0).unwrap()
        })
        .sum();
    total / cases.len() as f64
}

/// `abar_t` as an explicit product, independent of the schedule tables.
pub fn alpha_bar_product(steps: usize, start: f64, end: f64, t: usize) -> f64 {
    let mut prod = 1.0f64;
    for s in 1..=t {
        let eta = if steps == 1 {
            start
        } else {
            start + (end - start) * (s - 1) as f64 / (steps - 1) as f64
        };
        prod *= 1.0 - eta;
    }
    prod
}

/// Direct 2-D convolution with replicate padding.
pub fn naive_blur(field: &ImageField, size: usize, scale: f64) -> ImageField {
    let r = (size / 2) as isize;
    let mut w = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as f64 - r as f64, j as f64 - r as f64);
            w[i][j] = (-(di * di + dj * dj) / (2.0 * scale * scale)).exp();
            total += w[i][j];
        }
    }
    let (h, wd, c) = field.shape();
    ImageField::from_fn(h, wd, c, |ch, y, x| {
        let mut acc = 0.0;
        for i in 0..size {
            for j in 0..size {
                let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                let xx = (x as isize + j as isize - r).clamp(0, wd as isize - 1) as usize;
                acc += w[i][j] / total * field.get(ch, yy, xx);
            }
        }
        acc
    })
}

/// Windowed SSIM computed window by window with a 2-D Gaussian weight table.
pub fn reference_ssim(a: &ImageField, b: &ImageField, range: f64) -> f64 {
    let k = 11usize;
    let sigma = 1.5f64;
    let mut w = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            w[i * k + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let (h, wd, ch) = a.shape();
    let mut per_channel = 0.0;
    for c in 0..ch {
        let mut acc = 0.0;
        let mut count = 0usize;
        for y in 0..=h - k {
            for x in 0..=wd - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        ma += w[i * k + j] * a.get(c, y + i, x + j);
                        mb += w[i * k + j] * b.get(c, y + i, x + j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let da = a.get(c, y + i, x + j) - ma;
                        let db = b.get(c, y + i, x + j) - mb;
                        va += w[i * k + j] * da * da;
                        vb += w[i * k + j] * db * db;
                        cov += w[i * k + j] * da * db;
                    }
                }
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        per_channel += acc / count as f64;
    }
    per_channel / ch as f64
}

/// Spearman rank correlation for distinct values.
pub fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var)
}
