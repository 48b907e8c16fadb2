use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dynosmith::harness::{self, ExperimentConfig, Method};
use dynosmith::hyperopt::{gcv_select_rho, GcvConfig};
use dynosmith::io::{self, SimulationManifest};
use dynosmith::sindy::{ensemble_fit, EnsembleOptions, FeatureLibrary, FitOptions, Sparsity};
use dynosmith::smoothing::{
    finite_difference, kalman_smooth, savitzky_golay, tv_smooth, KalmanConfig, SavgolConfig, TvConfig,
};
use dynosmith::systems::{
    add_noise_with_rule, integrate, sample_initial_condition, true_sparsity, NoiseRule, OdeSystem, SystemKind,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sparse ODE identification from noisy trajectories.
#[derive(Parser)]
#[command(name = "dynosmith", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a benchmark system and add measurement noise.
    Simulate(SimulateArgs),
    /// Estimate states and derivatives from measurements.
    Smooth(SmoothArgs),
    /// Fit a sparse cubic model to smoothed states and derivatives.
    Fit(FitArgs),
    /// Run the benchmark grid.
    Experiment(ExperimentArgs),
    /// Summarize a finished grid and export trajectories.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    system: SystemKind,
    /// Comma-separated parameter values, in the system's order.
    #[arg(long)]
    params: Option<String>,
    /// Comma-separated initial condition; drawn from the system's distribution if absent.
    #[arg(long)]
    x0: Option<String>,
    #[arg(long, default_value_t = 16.0)]
    duration: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Relative noise level.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, value_enum, default_value_t = RuleArg::VarianceRatio)]
    noise_rule: RuleArg,
    #[arg(long, default_value_t = 19)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    VarianceRatio,
    StdRatio,
}

impl From<RuleArg> for NoiseRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::VarianceRatio => NoiseRule::VarianceRatio,
            RuleArg::StdRatio => NoiseRule::StdRatio,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SmoothMethod {
    Kalman,
    Tv,
    Savgol,
    Fd,
}

#[derive(Args)]
struct SmoothArgs {
    /// CSV with `t` and `z1..` (or `x1..`) columns.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    method: SmoothMethod,
    /// Kalman measurement:process variance ratio; selected by held-out error if absent.
    #[arg(long)]
    rho: Option<f64>,
    /// Total variation weight.
    #[arg(long, default_value_t = 1e-2)]
    lambda: f64,
    #[arg(long, default_value_t = 9)]
    window: usize,
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Seed of the held-out split.
    #[arg(long, default_value_t = 19)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// CSV with `x1..` and `dx1..` columns.
    #[arg(long)]
    input: PathBuf,
    /// Use the true number of terms of each equation of this system.
    #[arg(long, conflicts_with_all = ["sparsity", "total"])]
    system: Option<SystemKind>,
    /// Comma-separated number of terms per equation.
    #[arg(long, conflicts_with = "total")]
    sparsity: Option<String>,
    /// Number of terms across all equations.
    #[arg(long)]
    total: Option<usize>,
    #[arg(long, default_value_t = 20)]
    bags: usize,
    #[arg(long, default_value_t = 0.6)]
    bag_fraction: f64,
    #[arg(long, default_value_t = 0.01)]
    ridge: f64,
    #[arg(long, default_value_t = 19)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated method names.
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated system names.
    #[arg(long)]
    systems: Option<String>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Continue a run in `out` instead of refusing to touch it.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by `experiment`.
    #[arg(long)]
    results: PathBuf,
    /// Defaults to the results directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Configuration to use instead of the one in the run manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_trajectories: bool,
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut system = OdeSystem::new(a.system);
    if let Some(p) = &a.params {
        system = system.with_params(&io::parse_list::<f64>(p)?)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let x0 = match &a.x0 {
        Some(text) => io::parse_list::<f64>(text)?,
        None => sample_initial_condition(&system, &mut rng),
    };
    if x0.len() != system.dim() {
        bail!(
            "{} needs {} initial values, got {}",
            system.name(),
            system.dim(),
            x0.len()
        );
    }
    let traj = integrate(&system, &x0, a.duration, a.dt)?;
    let z = add_noise_with_rule(&traj, a.noise, a.noise_rule.into(), &mut rng)?;
    fs::create_dir_all(&a.out)?;
    io::trajectory_table(&traj, Some(&z)).write(&a.out.join("trajectory.csv"))?;
    let manifest = SimulationManifest::new(&system, a.seed, &x0, &z, a.noise_rule.into(), a.duration);
    io::write_json(&a.out.join("manifest.json"), &manifest)?;
    println!(
        "{} samples, noise std {:.4e} -> {}",
        z.len(),
        z.noise_std,
        a.out.display()
    );
    Ok(())
}

fn smooth(a: SmoothArgs) -> Result<()> {
    let z = io::read_measurements(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    fs::create_dir_all(&a.out)?;
    let result = match a.method {
        SmoothMethod::Kalman => {
            let rho = match a.rho {
                Some(rho) => rho,
                None => {
                    let sel = gcv_select_rho(&z, &GcvConfig::default().with_seed(a.seed))?;
                    io::write_json(&a.out.join("gcv.json"), &sel)?;
                    if !sel.converged {
                        eprintln!("warning: held-out minimum at the edge of the search range");
                    }
                    sel.rho_star
                }
            };
            kalman_smooth(&z, &KalmanConfig::new(rho))?
        }
        SmoothMethod::Tv => tv_smooth(&z, &TvConfig::new(a.lambda))?,
        SmoothMethod::Savgol => savitzky_golay(&z, &SavgolConfig::new(a.window).with_order(a.order))?,
        SmoothMethod::Fd => finite_difference(&z)?,
    };
    if !result.converged {
        eprintln!("warning: solver stopped at its iteration cap");
    }
    io::smoothed_table(&z.times, &result).write(&a.out.join("smoothed.csv"))?;
    io::write_json(&a.out.join("smoothed.json"), &result.sidecar())?;
    println!(
        "{} {:?} -> {}",
        result.method.name(),
        result.hyperparameters,
        a.out.display()
    );
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let (x, dx) = io::read_smoothed(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let dim = x.nrows();
    let sparsity = match (a.system, &a.sparsity, a.total) {
        (Some(kind), _, _) => {
            let system = OdeSystem::new(kind);
            if system.dim() != dim {
                bail!("{kind} has {} states, the data has {dim}", system.dim());
            }
            Sparsity::PerRow(true_sparsity(&system))
        }
        (_, Some(list), _) => Sparsity::PerRow(io::parse_list(list)?),
        (_, _, Some(total)) => Sparsity::Total(total),
        _ => bail!("give one of --system, --sparsity or --total"),
    };
    let library = FeatureLibrary::cubic(dim);
    let theta = library.evaluate(&x)?;
    let opts = EnsembleOptions {
        n_bags: a.bags,
        bag_fraction: a.bag_fraction,
        fit: FitOptions {
            ridge: a.ridge,
            ..FitOptions::default()
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let result = ensemble_fit(&library, &theta, &dx, &sparsity, &opts, &mut rng)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("coefficients.json"), result.aggregate.to_json()? + "\n")?;
    for eq in result.aggregate.equations() {
        println!("{eq}");
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ExperimentConfig::from_json(&text)?)
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.master_seed = seed;
    }
    if let Some(list) = &a.methods {
        cfg.methods = io::parse_list::<Method>(list)?;
    }
    if let Some(list) = &a.systems {
        cfg.systems = io::parse_list::<SystemKind>(list)?;
    }
    cfg.validate()?;
    let planned = cfg.plan().len();
    eprintln!("{planned} trials -> {}", a.out.display());
    let records = harness::run_grid(&cfg, &a.out, a.resume)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{} trials, {failed} failed -> {}",
        records.len(),
        a.out.join(harness::RESULTS_FILE).display()
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(path) => load_config(path)?,
        None => {
            harness::read_manifest(&a.results)
                .with_context(|| format!("no run manifest in {}", a.results.display()))?
                .config
        }
    };
    let table = a.results.join(harness::RESULTS_FILE);
    let records = harness::read_results_csv(&table).with_context(|| format!("reading {}", table.display()))?;
    let out = a.out.unwrap_or_else(|| a.results.clone());
    let files = harness::report(&cfg, &records, &out, !a.no_trajectories)?;
    // the list can be long; a closed pipe (`| head`) is not an error
    let mut stdout = std::io::stdout().lock();
    for path in files.summaries.iter().chain(&files.trajectories) {
        if writeln!(stdout, "{}", path.display()).is_err() {
            break;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Smooth(a) => smooth(a),
        Command::Fit(a) => fit(a),
        Command::Experiment(a) => experiment(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
