//! Brute-force reference for the scalar tempered joint.
//!
//! `p~(x, phi)` is normalised on a 2-D trapezoid grid: `x` linear, `phi`
//! log-spaced (integrated in `u = ln phi` with Jacobian `phi`). Accumulation
//! is done relative to the grid maximum of `log p~`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{Purpose, SplitRng};
use crate::special::{ln_gamma, LN_2PI};
use crate::variational::{
    free_energy, update_gphi, update_gx, GammaField, GaussianField, StepProblem, CAVI_TOLERANCE,
    DEFAULT_MAX_ITERS,
};

pub const DEFAULT_GRID_POINTS: usize = 2048;
pub const TAIL_MASS_LIMIT: f64 = 1e-8;
pub const MAX_GRID_RETRIES: usize = 3;
/// Free-energy decrease tolerated per half-update.
pub const MONOTONE_SLACK: f64 = 1e-8;

/// Grid points within this fraction of either end of an axis count as tail.
const TAIL_BAND: f64 = 0.01;
/// Log of the Gamma tail probability the covering `phi` range leaves out.
const LN_PHI_TAIL: f64 = -30.0;
const PILOT_POINTS: usize = 257;
const PILOT_ROUNDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarProblem {
    pub y: f64,
    pub mu: f64,
    pub sigma2_t: f64,
    pub alpha_t: f64,
    pub beta_t: f64,
    pub gamma: f64,
}

impl ScalarProblem {
    pub fn validate(&self) -> Result<()> {
        StepProblem::new(
            std::slice::from_ref(&self.y),
            std::slice::from_ref(&self.mu),
            self.sigma2_t,
            self.alpha_t,
            self.beta_t,
            self.gamma,
        )
        .map(|_| ())
    }

    pub fn as_step(&self) -> StepProblem<'_> {
        StepProblem {
            y: std::slice::from_ref(&self.y),
            mu: std::slice::from_ref(&self.mu),
            sigma2_t: self.sigma2_t,
            alpha_t: self.alpha_t,
            beta_t: self.beta_t,
            gamma: self.gamma,
            observed: None,
        }
    }

    /// `log p~(x, phi)`.
    pub fn log_joint(&self, x: f64, phi: f64) -> f64 {
        let r = self.y - x;
        let d = x - self.mu;
        let lik = (0.5 * phi.ln() - 0.5 * LN_2PI - 0.5 * phi * r * r) / self.gamma;
        let prior_phi = self.alpha_t * self.beta_t.ln() - ln_gamma(self.alpha_t) + (self.alpha_t - 1.0) * phi.ln()
            - self.beta_t * phi;
        let prior_x = -0.5 * (LN_2PI + self.sigma2_t.ln()) - d * d / (2.0 * self.sigma2_t);
        lik + prior_phi + prior_x
    }
}

/// Quadrature grid. `phi` is log-spaced on `[ln_phi_lo, ln_phi_hi]`; for
/// each `phi` row, `x` is linear on `m(phi) +/- x_half_width * s(phi)` where
/// `m`, `s^2` are the precision-weighted mean and variance of the two
/// Gaussian factors in `x` (likelihood precision `phi / gamma`, prior `1 / sigma_t^2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub x_half_width: f64,
    pub x_points: usize,
    pub ln_phi_lo: f64,
    pub ln_phi_hi: f64,
    pub phi_points: usize,
}

/// Ln of a point beyond which `Gamma(shape, 1)` keeps at most `e^LN_PHI_TAIL`
/// mass, on each side.
fn unit_gamma_bounds(shape: f64) -> (f64, f64) {
    // left: P(X < q) <= q^a / Gamma(a + 1)
    let lo = (LN_PHI_TAIL + ln_gamma(shape + 1.0)) / shape;
    // right: P(X > q) <~ q^(a-1) e^-q / Gamma(a), solved by fixed-point iteration
    let mut q: f64 = shape + 30.0;
    for _ in 0..50 {
        q = (-LN_PHI_TAIL + (shape - 1.0) * q.ln() - ln_gamma(shape)).max(shape + 1.0);
    }
    (lo, (q + 5.0 * shape.sqrt()).ln())
}

impl GridSpec {
    /// A grid that certainly contains the bulk: `x` to 12 conditional sd and
    /// `phi` between tail quantiles of `Gamma(alpha + 1/(2 gamma), rate)` for the
    /// smallest and largest plausible rates.
    pub fn covering(p: &ScalarProblem, points: usize) -> Self {
        let far = (p.y - p.mu).abs() + 12.0 * p.sigma2_t.sqrt();
        let shape = p.alpha_t + 0.5 / p.gamma;
        let rate_hi = p.beta_t + far * far / (2.0 * p.gamma);
        let (lo, hi) = unit_gamma_bounds(shape);
        Self {
            x_half_width: 12.0,
            x_points: points,
            ln_phi_lo: lo - rate_hi.ln(),
            ln_phi_hi: hi - p.beta_t.ln(),
            phi_points: points,
        }
    }

    /// [`GridSpec::covering`] with the `phi` range narrowed by coarse pilot
    /// passes to `E[ln phi] - 20 sd .. E[ln phi] + 12 sd`.
    pub fn auto(p: &ScalarProblem, points: usize) -> Self {
        let cover = Self::covering(p, PILOT_POINTS);
        let mut grid = cover;
        for _ in 0..PILOT_ROUNDS {
            let Ok(m) = integrate_on_grid(p, &grid) else {
                break;
            };
            let hu = (grid.ln_phi_hi - grid.ln_phi_lo) / (grid.phi_points - 1) as f64;
            let su = m.sd_ln_phi.max(hu);
            grid = Self {
                ln_phi_lo: (m.mean_ln_phi - 20.0 * su).max(cover.ln_phi_lo),
                ln_phi_hi: (m.mean_ln_phi + 12.0 * su).min(cover.ln_phi_hi),
                ..grid
            };
        }
        Self {
            x_points: points,
            phi_points: points,
            ..grid
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_points < 3 || self.phi_points < 3 {
            return Err(Error::config("grid needs at least 3 points per axis"));
        }
        if !(self.x_half_width > 0.0) || !(self.ln_phi_hi > self.ln_phi_lo) {
            return Err(Error::config("grid ranges must be non-empty"));
        }
        if ![self.x_half_width, self.ln_phi_lo, self.ln_phi_hi].iter().all(|v| v.is_finite()) {
            return Err(Error::config("grid ranges must be finite"));
        }
        Ok(())
    }

    /// Every spacing halved; old nodes are kept.
    pub fn doubled(&self) -> Self {
        Self {
            x_points: 2 * self.x_points - 1,
            phi_points: 2 * self.phi_points - 1,
            ..*self
        }
    }

    /// Both ranges doubled in width about their centres.
    pub fn expanded(&self) -> Self {
        let (uc, ur) = (0.5 * (self.ln_phi_lo + self.ln_phi_hi), self.ln_phi_hi - self.ln_phi_lo);
        Self {
            x_half_width: 2.0 * self.x_half_width,
            ln_phi_lo: uc - ur,
            ln_phi_hi: uc + ur,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPosterior {
    pub e_x: f64,
    pub e_phi: f64,
    pub log_z: f64,
    pub tail_mass: f64,
    pub sd_x: f64,
    pub mean_ln_phi: f64,
    pub sd_ln_phi: f64,
    pub grid: GridSpec,
}

fn trapezoid_weight(i: usize, n: usize, h: f64) -> f64 {
    if i == 0 || i + 1 == n {
        0.5 * h
    } else {
        h
    }
}

/// One pass over a fixed grid, without the tail check.
pub fn integrate_on_grid(p: &ScalarProblem, g: &GridSpec) -> Result<GridPosterior> {
    p.validate()?;
    g.validate()?;
    let hu = (g.ln_phi_hi - g.ln_phi_lo) / (g.phi_points - 1) as f64;
    let hz = 2.0 * g.x_half_width / (g.x_points - 1) as f64;
    let zs: Vec<f64> = (0..g.x_points).map(|i| -g.x_half_width + i as f64 * hz).collect();
    let band_x = ((g.x_points as f64 * TAIL_BAND).ceil() as usize).max(1);
    let band_u = ((g.phi_points as f64 * TAIL_BAND).ceil() as usize).max(1);
    let in_band = |i: usize, n: usize, band: usize| i < band || i + band >= n;

    // row j: log-integrand values ln p~(x, e^u) + u + ln s(u) on its x nodes
    let row = |j: usize| -> (f64, f64, f64, Vec<f64>) {
        let u = g.ln_phi_lo + j as f64 * hu;
        let phi = u.exp();
        let lik_prec = phi / p.gamma;
        let prior_prec = 1.0 / p.sigma2_t;
        let centre = (lik_prec * p.y + prior_prec * p.mu) / (lik_prec + prior_prec);
        let sd = (1.0 / (lik_prec + prior_prec)).sqrt();
        // log_joint(x, phi) with the x-free part hoisted out of the row
        let row_const = p.log_joint(p.y, phi) + u + sd.ln();
        let logs = zs
            .iter()
            .map(|&z| {
                let x = centre + sd * z;
                let (r, d, d0) = (p.y - x, x - p.mu, p.y - p.mu);
                row_const - 0.5 * lik_prec * r * r - 0.5 * prior_prec * (d * d - d0 * d0)
            })
            .collect();
        (u, centre, sd, logs)
    };
    let rows: Vec<(f64, f64, f64, Vec<f64>)> = (0..g.phi_points).into_par_iter().map(row).collect();
    let peak = rows
        .iter()
        .flat_map(|r| r.3.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::Numerical("grid log-density has no finite maximum".into()));
    }

    // per row: mass, x, x^2, phi, ln phi, (ln phi)^2, tail
    let sums: Vec<[f64; 7]> = rows
        .par_iter()
        .enumerate()
        .map(|(j, (u, centre, sd, logs))| {
            let wu = trapezoid_weight(j, g.phi_points, hu);
            let row_tail = in_band(j, g.phi_points, band_u);
            let mut acc = [0.0; 7];
            for (i, (&l, &z)) in logs.iter().zip(&zs).enumerate() {
                let f = trapezoid_weight(i, g.x_points, hz) * wu * (l - peak).exp();
                let x = centre + sd * z;
                acc[0] += f;
                acc[1] += f * x;
                acc[2] += f * x * x;
                if row_tail || in_band(i, g.x_points, band_x) {
                    acc[6] += f;
                }
            }
            acc[3] = acc[0] * u.exp();
            acc[4] = acc[0] * u;
            acc[5] = acc[0] * u * u;
            acc
        })
        .collect();
    let mut tot = [0.0; 7];
    for r in &sums {
        for k in 0..7 {
            tot[k] += r[k];
        }
    }
    if !(tot[0] > 0.0) || !tot[0].is_finite() {
        return Err(Error::Numerical("grid normaliser is not positive".into()));
    }
    let z = tot[0];
    let e_x = tot[1] / z;
    let mean_u = tot[4] / z;
    Ok(GridPosterior {
        e_x,
        e_phi: tot[3] / z,
        log_z: peak + z.ln(),
        tail_mass: tot[6] / z,
        sd_x: (tot[2] / z - e_x * e_x).max(0.0).sqrt(),
        mean_ln_phi: mean_u,
        sd_ln_phi: (tot[5] / z - mean_u * mean_u).max(0.0).sqrt(),
        grid: *g,
    })
}

/// Grid posterior means and log normaliser; the ranges are widened up to
/// [`MAX_GRID_RETRIES`] times until the tail mass is below [`TAIL_MASS_LIMIT`].
pub fn grid_joint_posterior(p: &ScalarProblem, g: &GridSpec) -> Result<GridPosterior> {
    let mut grid = *g;
    let mut last = integrate_on_grid(p, &grid)?;
    for _ in 0..MAX_GRID_RETRIES {
        if last.tail_mass < TAIL_MASS_LIMIT {
            return Ok(last);
        }
        grid = grid.expanded();
        last = integrate_on_grid(p, &grid)?;
    }
    if last.tail_mass < TAIL_MASS_LIMIT {
        return Ok(last);
    }
    let wider = grid.expanded();
    Err(Error::GridTooSmall {
        detail: format!("tail mass {:.3e} after {MAX_GRID_RETRIES} expansions", last.tail_mass),
        x_half_width: wider.x_half_width,
        ln_phi_lo: wider.ln_phi_lo,
        ln_phi_hi: wider.ln_phi_hi,
    })
}

/// CAVI on one scalar problem, recording `F` after every half-update.
#[derive(Debug, Clone, Serialize)]
pub struct CaviTrace {
    pub iterations: usize,
    pub converged: bool,
    pub e_x: f64,
    pub e_phi: f64,
    pub sigma2_hat: f64,
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub free_energy: Vec<f64>,
}

impl CaviTrace {
    pub fn final_free_energy(&self) -> f64 {
        *self.free_energy.last().expect("trace is never empty")
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.free_energy.windows(2).all(|w| w[1] >= w[0] - slack)
    }
}

/// The same iteration as [`crate::variational::cavi`]. The trace begins at
/// `(g(x)_1, g(phi)_0)` where `g(phi)_0` has the updated shape and mean `init_e_phi`.
pub fn cavi_trace(p: &ScalarProblem, init_e_phi: f64, max_iters: usize) -> Result<CaviTrace> {
    p.validate()?;
    let step = p.as_step();
    let shape = p.alpha_t + 0.5 / p.gamma;
    let mut gphi: GammaField = GammaField::from_mean_precision(shape, &[init_e_phi]);
    let mut previous: Option<f64> = None;
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let gx: GaussianField = update_gx(&step, &gphi.mean_precision());
        trace.push(free_energy(&step, &gx, &gphi));
        gphi = update_gphi(&step, &gx);
        trace.push(free_energy(&step, &gx, &gphi));
        iterations += 1;
        let converged = previous.is_some_and(|prev| (gx.mu_hat[0] - prev).powi(2) < CAVI_TOLERANCE);
        if converged || iterations >= max_iters {
            return Ok(CaviTrace {
                iterations,
                converged,
                e_x: gx.mu_hat[0],
                e_phi: gphi.alpha_hat[0] / gphi.beta_hat[0],
                sigma2_hat: gx.sigma2_hat[0],
                alpha_hat: gphi.alpha_hat[0],
                beta_hat: gphi.beta_hat[0],
                free_energy: trace,
            });
        }
        previous = Some(gx.mu_hat[0]);
    }
}

/// The scalar problem used as the reference CAVI example.
pub const REFERENCE_PROBLEM: ScalarProblem = ScalarProblem {
    y: 0.8,
    mu: 0.2,
    sigma2_t: 0.05,
    alpha_t: 1.0,
    beta_t: 0.01,
    gamma: 0.2,
};

/// [`REFERENCE_PROBLEM`] followed by `count - 1` seeded random problems.
pub fn problem_battery(count: usize, seed: u64) -> Vec<ScalarProblem> {
    let mut rng = SplitRng::new(seed).stream(Purpose::Problems, 0);
    let mut out = Vec::with_capacity(count);
    if count > 0 {
        out.push(REFERENCE_PROBLEM);
    }
    let log_uniform = |u: f64, lo: f64, hi: f64| (lo.ln() + u * (hi.ln() - lo.ln())).exp();
    while out.len() < count {
        let mu = 2.0 * rng.uniform() - 1.0;
        out.push(ScalarProblem {
            y: mu + 0.6 * rng.normal(),
            mu,
            sigma2_t: log_uniform(rng.uniform(), 1e-4, 0.5),
            alpha_t: 0.5 + 2.5 * rng.uniform(),
            beta_t: log_uniform(rng.uniform(), 1e-4, 0.1),
            gamma: 0.1 + 0.9 * rng.uniform(),
        });
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CaviSummary {
    pub iters: usize,
    pub converged: bool,
    #[serde(rename = "E_x")]
    pub e_x: f64,
    #[serde(rename = "E_phi")]
    pub e_phi: f64,
    pub free_energy: f64,
    /// Squared `mu_hat` change and relative `E(phi)` change of one more sweep.
    pub fixed_point_residual_mu: f64,
    pub fixed_point_residual_phi: f64,
    pub free_energy_trace: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    #[serde(rename = "E_x")]
    pub e_x: f64,
    #[serde(rename = "E_phi")]
    pub e_phi: f64,
    #[serde(rename = "log_Z")]
    pub log_z: f64,
    pub tail_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Gaps {
    /// `|E_g[x] - E[x]|`.
    pub x_abs: f64,
    /// `|E_g[phi] - E[phi]| / E[phi]`.
    pub phi_rel: f64,
    /// `log_Z - F`; non-negative up to quadrature error.
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemReport {
    pub inputs: ScalarProblem,
    pub cavi: CaviSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaps: Option<Gaps>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub monotone: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub problems: Vec<ProblemReport>,
}

impl OracleReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn all_monotone(&self) -> bool {
        self.problems.iter().all(|p| p.monotone)
    }
}

fn report_one(p: &ScalarProblem, points: usize) -> Result<ProblemReport> {
    let tr = cavi_trace(p, 1.0, DEFAULT_MAX_ITERS)?;
    let step = p.as_step();
    let gx = update_gx(&step, &[tr.e_phi]);
    let gphi = update_gphi(&step, &gx);
    let cavi = CaviSummary {
        iters: tr.iterations,
        converged: tr.converged,
        e_x: tr.e_x,
        e_phi: tr.e_phi,
        free_energy: tr.final_free_energy(),
        fixed_point_residual_mu: (gx.mu_hat[0] - tr.e_x).powi(2),
        fixed_point_residual_phi: ((gphi.alpha_hat[0] / gphi.beta_hat[0]) / tr.e_phi - 1.0).abs(),
        free_energy_trace: tr.free_energy.clone(),
    };
    let monotone = tr.is_monotone(MONOTONE_SLACK);
    let (oracle, gaps, error) = match grid_joint_posterior(p, &GridSpec::auto(p, points)) {
        Ok(o) => (
            Some(OracleSummary {
                e_x: o.e_x,
                e_phi: o.e_phi,
                log_z: o.log_z,
                tail_mass: o.tail_mass,
            }),
            Some(Gaps {
                x_abs: (tr.e_x - o.e_x).abs(),
                phi_rel: (tr.e_phi - o.e_phi).abs() / o.e_phi,
                bound: o.log_z - cavi.free_energy,
            }),
            None,
        ),
        Err(e) => (None, None, Some(e.to_string())),
    };
    Ok(ProblemReport {
        inputs: *p,
        cavi,
        oracle,
        gaps,
        error,
        monotone,
    })
}

/// CAVI against the grid oracle on every problem. Grid failures are recorded
/// per problem; invalid problems fail the batch.
pub fn vb_vs_oracle_report(problems: &[ScalarProblem], points: usize) -> Result<OracleReport> {
    if problems.is_empty() {
        return Err(Error::config("oracle report needs at least one problem"));
    }
    let problems = problems
        .par_iter()
        .map(|p| report_one(p, points))
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleReport { problems })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_problem_centres_x() {
        let p = ScalarProblem {
            y: 0.3,
            mu: 0.3,
            sigma2_t: 0.02,
            alpha_t: 1.0,
            beta_t: 0.01,
            gamma: 0.5,
        };
        let o = grid_joint_posterior(&p, &GridSpec::auto(&p, 257)).unwrap();
        assert!((o.e_x - 0.3).abs() < 1e-12);
        assert!(o.tail_mass < TAIL_MASS_LIMIT);
    }

    #[test]
    fn dominant_prior_gives_prior_mean() {
        let p = ScalarProblem {
            y: 0.5,
            mu: 0.0,
            sigma2_t: 0.1,
            alpha_t: 200.0,
            beta_t: 1e6,
            gamma: 1.0,
        };
        let o = grid_joint_posterior(&p, &GridSpec::auto(&p, 513)).unwrap();
        // phi | x ~ Gamma(alpha + 1/2, beta + r^2/2) and r^2 is negligible
        let expect = (p.alpha_t + 0.5) / p.beta_t;
        assert!((o.e_phi / expect - 1.0).abs() < 1e-6);
        assert!((o.e_phi / (p.alpha_t / p.beta_t) - 1.0).abs() < 0.01);
    }

    #[test]
    fn tiny_grid_is_rejected_with_ranges() {
        let p = REFERENCE_PROBLEM;
        let g = GridSpec {
            x_half_width: 0.1,
            x_points: 33,
            ln_phi_lo: 0.0,
            ln_phi_hi: 0.1,
            phi_points: 33,
        };
        let shrunk = integrate_on_grid(&p, &g).unwrap();
        assert!(shrunk.tail_mass > TAIL_MASS_LIMIT);
        let g = GridSpec { x_half_width: 0.01, ln_phi_lo: -40.0, ln_phi_hi: -39.99, ..g };
        match grid_joint_posterior(&p, &g) {
            Err(Error::GridTooSmall { x_half_width, .. }) => assert!(x_half_width > 0.01),
            other => panic!("expected grid error, got {other:?}"),
        }
    }

    #[test]
    fn battery_is_deterministic_and_starts_with_reference() {
        let a = problem_battery(10, 5);
        assert_eq!(a, problem_battery(10, 5));
        assert_eq!(a[0], REFERENCE_PROBLEM);
        assert!(a.iter().all(|p| p.validate().is_ok()));
    }
}
