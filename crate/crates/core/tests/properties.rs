//! Invariants checked over randomly generated inputs.

use proptest::prelude::*;

use diffvi::degrade::{corrupt, rggb_mask, NoiseSpec};
use diffvi::io::{decode_png, encode_png};
use diffvi::metrics::{psnr, ssim};
use diffvi::oracle::{cavi_trace, ScalarProblem, MONOTONE_SLACK};
use diffvi::restoration::{map_combine, rectify_variance, DegradationMask};
use diffvi::rng::{Purpose, SplitRng};
use diffvi::variational::{update_gphi, update_gx, StepProblem};
use diffvi::ImageField;

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.ln()..hi.ln()).prop_map(f64::exp)
}

fn scalar_problem() -> impl Strategy<Value = ScalarProblem> {
    (
        -1.5..1.5f64,
        -1.0..1.0f64,
        log_uniform(1e-5, 1.0),
        0.1..5.0f64,
        log_uniform(1e-5, 1.0),
        0.02..1.0f64,
    )
        .prop_map(|(y, mu, sigma2_t, alpha_t, beta_t, gamma)| ScalarProblem {
            y,
            mu,
            sigma2_t,
            alpha_t,
            beta_t,
            gamma,
        })
}

fn field(h: usize, w: usize, c: usize, seed: u64, lo: f64, hi: f64) -> ImageField {
    let mut s = SplitRng::new(seed).stream(Purpose::Test, 0);
    ImageField::from_fn(h, w, c, |_, _, _| lo + (hi - lo) * s.uniform())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn free_energy_never_decreases(p in scalar_problem(), init in log_uniform(1e-3, 1e3)) {
        let tr = cavi_trace(&p, init, 50).unwrap();
        prop_assert!(tr.is_monotone(MONOTONE_SLACK), "{:?}", tr.free_energy);
    }

    #[test]
    fn gx_mean_between_data_and_prior(p in scalar_problem(), e in log_uniform(1e-3, 1e4)) {
        let gx = update_gx(&p.as_step(), &[e]);
        let (lo, hi) = (p.y.min(p.mu), p.y.max(p.mu));
        let slack = 1e-12 * (1.0 + hi.abs() + lo.abs());
        prop_assert!(gx.mu_hat[0] >= lo - slack && gx.mu_hat[0] <= hi + slack);
        prop_assert!(gx.sigma2_hat[0] > 0.0);
        prop_assert!(gx.sigma2_hat[0] <= p.sigma2_t * (1.0 + 1e-12));
        prop_assert!(gx.sigma2_hat[0] <= p.gamma / e * (1.0 + 1e-12));
    }

    #[test]
    fn lower_temperature_trusts_data_more(p in scalar_problem(), e in log_uniform(1e-3, 1e4), f in 0.1..0.9f64) {
        let hot = update_gx(&p.as_step(), &[e]);
        let cold = ScalarProblem { gamma: p.gamma * f, ..p };
        let cold = update_gx(&cold.as_step(), &[e]);
        prop_assert!((cold.mu_hat[0] - p.y).abs() <= (hot.mu_hat[0] - p.y).abs() + 1e-12);
        prop_assert!(cold.sigma2_hat[0] <= hot.sigma2_hat[0] * (1.0 + 1e-12));
    }

    #[test]
    fn gphi_posterior_shape_and_rate(p in scalar_problem(), e in log_uniform(1e-3, 1e4)) {
        let step = p.as_step();
        let gphi = update_gphi(&step, &update_gx(&step, &[e]));
        prop_assert!((gphi.alpha_hat[0] - p.alpha_t - 0.5 / p.gamma).abs() < 1e-12 * gphi.alpha_hat[0]);
        prop_assert!(gphi.beta_hat[0] > p.beta_t);
    }

    #[test]
    fn elementwise_updates_ignore_partitioning(
        n in 2usize..64,
        split in 1usize..63,
        seed in any::<u64>(),
        s2 in log_uniform(1e-4, 0.5),
        gamma in 0.05..1.0f64,
    ) {
        let split = split.min(n - 1);
        let mut s = SplitRng::new(seed).stream(Purpose::Test, 0);
        let y: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let mu: Vec<f64> = (0..n).map(|_| 0.3 * s.normal()).collect();
        let e: Vec<f64> = (0..n).map(|_| 0.1 + 100.0 * s.uniform()).collect();
        let whole = StepProblem::new(&y, &mu, s2, 1.0, 0.01, gamma).unwrap();
        let gx = update_gx(&whole, &e);
        let gphi = update_gphi(&whole, &gx);
        let mut mu_hat = Vec::new();
        let mut beta_hat = Vec::new();
        for (a, b) in [(0, split), (split, n)] {
            let part = StepProblem::new(&y[a..b], &mu[a..b], s2, 1.0, 0.01, gamma).unwrap();
            let pgx = update_gx(&part, &e[a..b]);
            beta_hat.extend(update_gphi(&part, &pgx).beta_hat);
            mu_hat.extend(pgx.mu_hat);
        }
        prop_assert_eq!(mu_hat, gx.mu_hat);
        prop_assert_eq!(beta_hat, gphi.beta_hat);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rectified_variance_stays_in_range(
        h in 1usize..20, w in 1usize..20, seed in any::<u64>(),
        size in 1usize..6, scale in 0.3..4.0f64,
    ) {
        let size = 2 * size - 1;
        let v = field(h, w, 1, seed, 1e-4, 0.5);
        let out = rectify_variance(&v, size, scale).unwrap();
        let lo = v.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for &r in out.data() {
            prop_assert!(r > 0.0 && r >= lo * (1.0 - 1e-12) && r <= hi * (1.0 + 1e-12));
        }
    }

    #[test]
    fn map_combine_interpolates(n in 1usize..40, seed in any::<u64>(), s2 in log_uniform(1e-6, 1.0)) {
        let y = field(1, n, 1, seed, -1.0, 1.0);
        let mu = field(1, n, 1, seed.wrapping_add(1), -1.0, 1.0);
        let var = field(1, n, 1, seed.wrapping_add(2), 1e-4, 1.0);
        let mask = DegradationMask::all_ones(1, n, 1);
        let out = map_combine(&y, &mu, s2, var.data(), Some(&mask)).unwrap();
        prop_assert_eq!(&out, &map_combine(&y, &mu, s2, var.data(), None).unwrap());
        for i in 0..n {
            let (a, b) = (y.data()[i], mu.data()[i]);
            let v = out.data()[i];
            prop_assert!(v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12);
        }
    }

    #[test]
    fn metrics_are_symmetric(h in 11usize..20, w in 11usize..20, c in prop::sample::select(vec![1usize, 3]), seed in any::<u64>()) {
        let a = field(h, w, c, seed, -1.0, 1.0);
        let b = field(h, w, c, seed.wrapping_add(7), -1.0, 1.0);
        prop_assert_eq!(psnr(&a, &b, 2.0).unwrap(), psnr(&b, &a, 2.0).unwrap());
        let (ab, ba) = (ssim(&a, &b, 2.0).unwrap(), ssim(&b, &a, 2.0).unwrap());
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
        prop_assert!((ssim(&a, &a, 2.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn png_round_trip(h in 1usize..16, w in 1usize..16, c in prop::sample::select(vec![1usize, 3]), bytes in prop::collection::vec(any::<u8>(), 768)) {
        let data: Vec<f64> = (0..h * w * c).map(|i| 2.0 * f64::from(bytes[i]) / 255.0 - 1.0).collect();
        let img = ImageField::new(h, w, c, data).unwrap();
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn corruption_is_reproducible(seed in any::<u64>(), idx in 0usize..5) {
        let specs = ["gaussian:0.1", "hetero:0.05,0.2", "correlated:0.1,5,1", "poisson:30", "bernoulli:0.2"];
        let spec: NoiseSpec = specs[idx].parse().unwrap();
        let lo = if spec.is_count() { 0.0 } else { -1.0 };
        let x = field(9, 10, 3, 4, lo, 1.0);
        let a = corrupt(&x, &spec, &mut SplitRng::new(seed).stream(Purpose::Degradation, 0)).unwrap();
        let b = corrupt(&x, &spec, &mut SplitRng::new(seed).stream(Purpose::Degradation, 0)).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(spec.to_string().parse::<NoiseSpec>().unwrap(), spec);
    }

    #[test]
    fn rggb_partitions_pixels(h in 1usize..20, w in 1usize..20) {
        let (h, w) = (2 * h, 2 * w);
        let mask = rggb_mask(h, w).unwrap();
        let f = mask.field();
        let mut counts = [0usize; 3];
        for y in 0..h {
            for x in 0..w {
                let on: Vec<usize> = (0..3).filter(|&c| f.get(c, y, x) == 1.0).collect();
                prop_assert_eq!(on.len(), 1);
                counts[on[0]] += 1;
            }
        }
        let n = h * w;
        prop_assert_eq!(counts, [n / 4, n / 2, n / 4]);
    }
}
