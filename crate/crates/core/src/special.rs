/// Digamma function for `x > 0`.
///
/// Recurrence up to `x >= 10`, then the asymptotic series through `x^-14`;
/// absolute error is below 1e-14 on `(0, inf)` away from the pole.
pub fn digamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0, "digamma defined here only for x > 0");
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - series
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Entropy of `Gamma(shape, rate)`.
pub fn gamma_entropy(shape: f64, rate: f64) -> f64 {
    shape - rate.ln() + ln_gamma(shape) + (1.0 - shape) * digamma(shape)
}

/// `log Gamma(x; shape, rate)` density.
pub fn gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
