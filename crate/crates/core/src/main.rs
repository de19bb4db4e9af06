use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use diffvi::degrade::{corrupt, rggb_mask, NoiseSpec};
use diffvi::diffusion::{sample_unconditional, EpsilonPredictor, PriorSelector};
use diffvi::io::{load_image, normalize_for_display, save_image};
use diffvi::metrics::{psnr, ssim};
use diffvi::oracle::{problem_battery, vb_vs_oracle_report, DEFAULT_GRID_POINTS};
use diffvi::restoration::{denoise_observed, demosaic_observed, RestorationConfig, Restoration, WarmStart};
use diffvi::rng::{Purpose, SplitRng};
use diffvi::{Error, ImageField, Result};

#[derive(Parser)]
#[command(name = "diffvi", version, about = "Diffusion-prior image restoration with per-pixel noise estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Remove unknown, spatially varying noise.
    Denoise(RestoreArgs),
    /// Reconstruct a full colour image from a Bayer mosaic.
    Demosaic {
        #[arg(long, default_value = "rggb")]
        pattern: String,
        /// Keep the likelihood at unobserved sites inside the precision update.
        #[arg(long)]
        unmasked_cavi: bool,
        #[command(flatten)]
        args: RestoreArgs,
    },
    /// Apply a synthetic degradation.
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// gaussian:<s> | hetero:<s_left>,<s_right> | correlated:<s>,<l>,<scale> | poisson:<lambda> | bernoulli:<p> | bernoulli-keep:<p>
        #[arg(long)]
        noise: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// PSNR and SSIM between two images, in [0, 1] intensity units.
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        test: Vec<PathBuf>,
    },
    /// Unconditional ancestral sampling from a prior.
    Sample {
        #[arg(long)]
        prior: String,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare CAVI against brute-force grid integration on random scalar problems.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid_points: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args, Clone)]
struct RestoreArgs {
    /// One or more input PNGs; each needs a matching --output.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    output: Vec<PathBuf>,
    #[arg(long)]
    prior: String,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.2)]
    gamma: f64,
    #[arg(long, default_value_t = 9)]
    kernel_size: usize,
    #[arg(long)]
    kernel_scale: f64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    eta_start: f64,
    #[arg(long, default_value_t = 0.02)]
    eta_end: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    no_ale: bool,
    #[arg(long)]
    no_rectify: bool,
    /// Carry E(phi) between steps without rescaling.
    #[arg(long)]
    plain_warm_start: bool,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// Write the final per-pixel noise variance map, stretched for display.
    #[arg(long, num_args = 1..)]
    emit_variance: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Serialize)]
struct ResolvedRestore<'a> {
    command: &'a str,
    inputs: &'a [PathBuf],
    outputs: &'a [PathBuf],
    prior: String,
    config: &'a RestorationConfig,
    emit_variance: &'a [PathBuf],
    jobs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pattern: Option<&'a str>,
}

fn print_config<T: Serialize>(value: &T) {
    eprintln!("config: {}", serde_json::to_string(value).expect("config serialises"));
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        )),
        _ => Ok(()),
    }
}

impl RestoreArgs {
    fn config(&self) -> RestorationConfig {
        let mut c = RestorationConfig::new(self.beta, self.kernel_scale);
        c.alpha = self.alpha;
        c.gamma = self.gamma;
        c.kernel_size = self.kernel_size;
        c.steps = self.steps;
        c.eta_start = self.eta_start;
        c.eta_end = self.eta_end;
        c.seed = self.seed;
        c.enable_ale = !self.no_ale;
        c.enable_rectify = !self.no_rectify;
        c.warm_start = if self.plain_warm_start { WarmStart::Plain } else { WarmStart::Rescaled };
        c.max_cavi_iters = self.max_iters;
        c
    }

    fn check_paths(&self) -> Result<()> {
        if self.input.len() != self.output.len() {
            return Err(Error::config(format!(
                "{} inputs but {} outputs",
                self.input.len(),
                self.output.len()
            )));
        }
        if !self.emit_variance.is_empty() && self.emit_variance.len() != self.input.len() {
            return Err(Error::config("--emit-variance needs one path per input"));
        }
        if self.jobs == 0 {
            return Err(Error::config("--jobs must be >= 1"));
        }
        for p in self.output.iter().chain(&self.emit_variance) {
            ensure_parent(p)?;
        }
        Ok(())
    }
}

fn progress(label: &str, total: usize) -> impl FnMut(&diffvi::restoration::StepRecord<'_>) + '_ {
    let every = (total / 10).max(1);
    move |rec| {
        if rec.t % every == 0 || rec.t == 1 {
            eprintln!("{label}: step {}/{total}", total + 1 - rec.t);
        }
    }
}

fn run_restore(name: &str, args: &RestoreArgs, pattern: Option<&str>, mask_cavi: bool) -> Result<()> {
    let mut config = args.config();
    config.mask_cavi = mask_cavi;
    let selector: PriorSelector = args.prior.parse()?;
    print_config(&ResolvedRestore {
        command: name,
        inputs: &args.input,
        outputs: &args.output,
        prior: selector.to_string(),
        config: &config,
        emit_variance: &args.emit_variance,
        jobs: args.jobs,
        pattern,
    });
    config.validate()?;
    args.check_paths()?;
    let images = args.input.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
    let predictor = selector.build()?;
    let predictor: &dyn EpsilonPredictor = predictor.as_ref();

    let work = |(i, y0): (usize, &ImageField)| -> Result<Restoration> {
        let label = args.input[i].display().to_string();
        let mut observe = progress(&label, config.steps);
        match pattern {
            None => denoise_observed(y0, predictor, &config, &mut observe),
            Some(_) => {
                let mask = rggb_mask(y0.height(), y0.width())?;
                if y0.channels() != 3 {
                    return Err(Error::config(format!("{label}: demosaicing needs an RGB input")));
                }
                let observed = mask.apply(y0)?;
                demosaic_observed(&observed, &mask, predictor, &config, &mut observe)
            }
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let results: Vec<Result<Restoration>> = pool.install(|| images.par_iter().enumerate().map(work).collect());
    for (i, r) in results.into_iter().enumerate() {
        let r = r?;
        if r.unconverged_steps > 0 {
            eprintln!(
                "{}: CAVI hit the iteration cap at {} step(s)",
                args.input[i].display(),
                r.unconverged_steps
            );
        }
        save_image(&r.image, &args.output[i])?;
        if let Some(p) = args.emit_variance.get(i) {
            save_image(&normalize_for_display(&r.noise_variance), p)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Denoise(args) => run_restore("denoise", args, None, true),
        Command::Demosaic { pattern, unmasked_cavi, args } => {
            if pattern != "rggb" {
                return Err(Error::config(format!("unsupported CFA pattern {pattern:?}; only rggb")));
            }
            run_restore("demosaic", args, Some(pattern), !unmasked_cavi)
        }
        Command::Corrupt { input, output, noise, seed } => {
            let spec: NoiseSpec = noise.parse()?;
            print_config(&serde_json::json!({
                "command": "corrupt", "input": input, "output": output,
                "noise": spec.to_string(), "seed": seed,
            }));
            ensure_parent(output)?;
            let x = load_image(input)?;
            let mut rng = SplitRng::new(*seed).stream(Purpose::Degradation, 0);
            let y = if spec.is_count() {
                corrupt(&x.to_unit_range(), &spec, &mut rng)?.from_unit_range()
            } else {
                corrupt(&x, &spec, &mut rng)?
            };
            save_image(&y, output)
        }
        Command::Metrics { reference, test } => {
            print_config(&serde_json::json!({"command": "metrics", "ref": reference, "test": test}));
            if test.is_empty() {
                return Err(Error::config("metrics needs at least one --test image"));
            }
            let r = load_image(reference)?.to_unit_range();
            println!("{:<40} {:>10} {:>10}", "image", "PSNR (dB)", "SSIM");
            let mut lines = Vec::new();
            for t in test {
                let x = load_image(t)?.to_unit_range();
                let p = psnr(&r, &x, 1.0)?;
                let s = ssim(&r, &x, 1.0)?;
                println!("{:<40} {:>10.4} {:>10.6}", t.display(), p, s);
                lines.push(serde_json::json!({
                    "ref": reference, "test": t, "psnr": p, "ssim": s,
                }));
            }
            for l in lines {
                println!("{l}");
            }
            Ok(())
        }
        Command::Sample { prior, width, height, channels, steps, seed, output } => {
            let selector: PriorSelector = prior.parse()?;
            ensure_parent(output)?;
            let predictor = selector.build()?;
            let c = channels.unwrap_or_else(|| selector.default_channels(predictor.as_ref()));
            print_config(&serde_json::json!({
                "command": "sample", "prior": selector.to_string(), "width": width, "height": height,
                "channels": c, "steps": steps, "seed": seed, "output": output,
            }));
            let sched = diffvi::diffusion::DiffusionSchedule::default_linear(*steps)?;
            let x = sample_unconditional(predictor.as_ref(), &sched, *height, *width, c, *seed)?;
            save_image(&x.clamp(-1.0, 1.0), output)
        }
        Command::OracleCheck { count, seed, grid_points, output } => {
            print_config(&serde_json::json!({
                "command": "oracle-check", "count": count, "seed": seed,
                "grid_points": grid_points, "output": output,
            }));
            ensure_parent(output)?;
            let report = vb_vs_oracle_report(&problem_battery(*count, *seed), *grid_points)?;
            std::fs::write(output, report.to_json()).map_err(|e| Error::io(output, e))?;
            let failed = report.problems.iter().filter(|p| p.error.is_some()).count();
            eprintln!(
                "{} problems, monotone: {}, grid failures: {failed}",
                report.problems.len(),
                report.all_monotone()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
