use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tokenset_core::autodiff::write_trace_csv;
use tokenset_core::concentration::{build_covering, concentration_event_check, write_covering_csv};
use tokenset_core::experiments::summary::summarize;
use tokenset_core::experiments::{
    derive_seed, fit_slope, run_adversarial_two_point, run_classification_comparison, run_concentration_sweep,
    run_discretization_sweep, run_regularity, run_rpe_stability_sweep, run_shortest_path_instability,
    run_worstcase_detailed, write_bound_overlay, ConcentrationMode, DomainChoice, ExperimentConfig, ExperimentKind,
    Statistic, SweepResult,
};
use tokenset_core::model::checkpoint;
use tokenset_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tokenset-lab", version, about = "Size-generalization sweeps for tokenset transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Worst-case output error between sampled and reference tokensets.
    Worstcase {
        #[command(flatten)]
        common: Common,
        /// Synthetic-sphere point clouds with displacement encodings.
        #[arg(long)]
        point_cloud: bool,
        /// Directory for per-run `epoch,objective` traces and final checkpoints.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        #[command(flatten)]
        bound: BoundArgs,
    },
    /// Random-walk encoding versus its graphon kernel power.
    RpeStability {
        #[command(flatten)]
        common: Common,
    },
    /// Hop distances of dense graphs versus the limit distance 1.
    SpInstability {
        #[command(flatten)]
        common: Common,
    },
    /// Generalization gap of random-walk and shortest-path encodings.
    Classify {
        #[command(flatten)]
        common: Common,
    },
    /// Two-point construction with logit scale L.
    Adversarial {
        #[arg(long = "big-l", default_value_t = 10.0)]
        big_l: f64,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Log-log slope of one metric in a results CSV.
    FitSlope {
        input: PathBuf,
        #[arg(long)]
        metric: String,
        /// mean, mean+std or median
        #[arg(long, default_value = "mean")]
        statistic: String,
    },
    /// Measure-regularity constants `C` and `D` of a domain.
    Regularity {
        #[command(flatten)]
        common: Common,
    },
    /// Concentration event on coverings, or the one-layer discretization error.
    Concentration {
        #[command(flatten)]
        common: Common,
        /// event or discretization
        #[arg(long)]
        mode: Option<String>,
        /// Covering cells with reference and empirical masses for one sample at the largest n.
        #[arg(long)]
        covering_csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated sizes.
    #[arg(long)]
    n_grid: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Any config key, repeatable: `--set epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Also write the plain-text summary here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    /// Write `n,bound` for the grid with the given constants.
    #[arg(long)]
    bound_overlay: Option<PathBuf>,
    /// H1,H2,H3
    #[arg(long, default_value = "1,1,1")]
    bound_h: String,
    #[arg(long, default_value_t = 0.5)]
    bound_rho: f64,
}

impl Common {
    fn config(&self, kind: ExperimentKind, tweak: impl FnOnce(&mut ExperimentConfig)) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::defaults(kind);
        tweak(&mut c);
        if let Some(p) = &self.config {
            c.apply_text(&fs::read_to_string(p)?)?;
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got {o:?}")))?;
            c.set(k, v)?;
        }
        if let Some(g) = &self.n_grid {
            c.set("n_grid", g)?;
        }
        if let Some(r) = self.replicates {
            c.replicates = r;
        }
        if let Some(s) = self.seed {
            c.seed = Some(s);
        }
        if let Some(o) = &self.out {
            c.out = Some(o.clone());
        }
        if c.seed.is_none() {
            return Err(Error::InvalidArgument("--seed is required (or seed = ... in the config)".into()));
        }
        c.validate()?;
        Ok(c)
    }

    fn finish(&self, config: &ExperimentConfig, result: &SweepResult) -> Result<()> {
        emit(config.out.as_deref(), result)?;
        let text = summarize(config, result);
        // Keep stdout pure CSV when no output file is given.
        if config.out.is_some() {
            print!("{text}");
        } else {
            eprint!("{text}");
        }
        if let Some(p) = &self.summary {
            fs::write(p, text)?;
        }
        Ok(())
    }
}

fn emit(out: Option<&Path>, result: &SweepResult) -> Result<()> {
    match out {
        Some(p) => result.write_csv(BufWriter::new(File::create(p)?)),
        None => result.write_csv(std::io::stdout().lock()),
    }
}

fn parse_h(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad bound constant {t:?}"))))
        .collect::<Result<_>>()?;
    v.try_into().map_err(|_| Error::InvalidArgument("--bound-h needs three constants".into()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Worstcase {
            common,
            point_cloud,
            trace_dir,
            bound,
        } => {
            let config = common.config(ExperimentKind::WorstCase, |c| {
                if point_cloud {
                    c.use_point_cloud_defaults();
                }
            })?;
            let (result, traces) = run_worstcase_detailed(&config)?;
            if let Some(dir) = trace_dir {
                fs::create_dir_all(&dir)?;
                for t in &traces {
                    let stem = format!("n{}_r{}", t.n, t.replicate);
                    let objective: Vec<f64> = t.errors.iter().map(|e| -e).collect();
                    write_trace_csv(&objective, BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?))?;
                    let extra = [("n".to_string(), t.n.to_string()), ("replicate".to_string(), t.replicate.to_string())];
                    checkpoint::save(&dir, &stem, &t.params, &extra)?;
                }
            }
            if let Some(p) = bound.bound_overlay {
                let d = if config.domain == DomainChoice::Graphon { 1.0 } else { 2.0 };
                let h = parse_h(&bound.bound_h)?;
                write_bound_overlay(&config.n_grid, h, bound.bound_rho, d, BufWriter::new(File::create(p)?))?;
            }
            common.finish(&config, &result)
        }
        Command::RpeStability { common } => {
            let config = common.config(ExperimentKind::RpeStability, |_| {})?;
            common.finish(&config, &run_rpe_stability_sweep(&config)?)
        }
        Command::SpInstability { common } => {
            let config = common.config(ExperimentKind::SpInstability, |_| {})?;
            common.finish(&config, &run_shortest_path_instability(&config)?)
        }
        Command::Classify { common } => {
            let config = common.config(ExperimentKind::Classification, |_| {})?;
            common.finish(&config, &run_classification_comparison(&config)?)
        }
        Command::Adversarial {
            big_l,
            trials,
            seed,
            out,
        } => {
            if big_l < 10.0 {
                eprintln!("warning: L = {big_l} is below the theorem regime L ≥ 10");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let report = run_adversarial_two_point(big_l, trials, &mut rng)?;
            emit(out.as_deref(), &report.to_sweep()?)?;
            println!(
                "L = {}, n = {}: continuous {:.9} (|Θ−1| ≤ {:.3e}: {}), all-a {}, gap {:.6}",
                report.l,
                report.n,
                report.continuous_output,
                report.continuous_tolerance,
                report.continuous_ok(),
                report.all_a_output,
                report.gap
            );
            println!(
                "all-a frequency {:.4} over {} trials, closed form {:.4}; gap ≥ 1/4 frequency {:.4}",
                report.all_a_frequency, report.trials, report.all_a_probability, report.large_gap_frequency
            );
            Ok(())
        }
        Command::FitSlope {
            input,
            metric,
            statistic,
        } => {
            let result = SweepResult::read_csv(BufReader::new(File::open(input)?))?;
            let stat: Statistic = statistic.parse()?;
            let f = fit_slope(&result, &metric, stat)?;
            println!("slope {:.6} stderr {:.6} intercept {:.6} points {}", f.slope, f.stderr, f.intercept, f.points);
            Ok(())
        }
        Command::Regularity { common } => {
            let config = common.config(ExperimentKind::Regularity, |_| {})?;
            let est = run_regularity(&config)?;
            let mut text = String::from("radius,min_mass,residual\n");
            for ((r, m), e) in config.radii.iter().zip(&est.min_masses).zip(&est.residuals) {
                text.push_str(&format!("{r},{m},{e}\n"));
            }
            match &config.out {
                Some(p) => fs::write(p, &text)?,
                None => print!("{text}"),
            }
            println!("C = {:.6}, D = {:.6}", est.c, est.d);
            Ok(())
        }
        Command::Concentration {
            common,
            mode,
            covering_csv,
        } => {
            let mut config = common.config(ExperimentKind::Concentration, |_| {})?;
            if let Some(m) = mode {
                config.set("mode", &m)?;
            }
            let result = match config.mode {
                ConcentrationMode::Event => run_concentration_sweep(&config)?,
                ConcentrationMode::Discretization => run_discretization_sweep(&config)?,
            };
            if let Some(p) = covering_csv {
                let n = *config.n_grid.last().unwrap();
                let base = config.seed.expect("validated");
                let domain = config.domain_spec()?;
                let r = (n as f64).powf(-1.0 / (config.d_chi + 2.0));
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, "covering-export", &[n as u64]));
                let cov = build_covering(&domain, r, config.probes, &mut rng)?;
                let (latents, _) = domain.sample_latents(n, &mut rng)?;
                let check = concentration_event_check(latents.view(), &cov, config.tau, config.c_chi, config.d_chi)?;
                write_covering_csv(&cov, &check, BufWriter::new(File::create(p)?))?;
            }
            common.finish(&config, &result)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
