use crate::error::{Error, Result};
use crate::image::ImageField;

/// Reported in place of `+inf` when the images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

pub fn mse(reference: &ImageField, test: &ImageField) -> Result<f64> {
    reference.ensure_same_shape(test)?;
    let n = reference.len() as f64;
    Ok(reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// `10 log10(peak^2 / mse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &ImageField, test: &ImageField, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::config(format!("PSNR peak must be > 0, got {peak}")));
    }
    let m = mse(reference, test)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let g: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sum over every fully-contained window.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|j| g[j] * src[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM averaged over channels; Gaussian window 11x11, sigma 1.5,
/// `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`.
pub fn ssim(reference: &ImageField, test: &ImageField, dynamic_range: f64) -> Result<f64> {
    reference.ensure_same_shape(test)?;
    let (h, w, c) = reference.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::config(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    if !(dynamic_range > 0.0) {
        return Err(Error::config(format!("SSIM dynamic range must be > 0, got {dynamic_range}")));
    }
    let g = ssim_window();
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let mut total = 0.0;
    for ch in 0..c {
        let a = reference.plane(ch);
        let b = test.plane(ch);
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
        let mu_a = filter_valid(a, h, w, &g);
        let mu_b = filter_valid(b, h, w, &g);
        let aa = filter_valid(&prod(&|x, _| x * x), h, w, &g);
        let bb = filter_valid(&prod(&|_, y| y * y), h, w, &g);
        let ab = filter_valid(&prod(&|x, y| x * y), h, w, &g);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_constant_offset() {
        let a = ImageField::from_fn(4, 4, 1, |_, y, x| (y * 4 + x) as f64 / 20.0);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn ssim_identity_and_small_input() {
        let a = ImageField::from_fn(16, 16, 2, |c, y, x| ((c + y * x) % 5) as f64 / 4.0);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
        assert!(ssim(&ImageField::zeros(10, 20, 1), &ImageField::zeros(10, 20, 1), 1.0).is_err());
    }
}
