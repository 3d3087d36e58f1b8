use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mkq_core::bench::with_thread_cap;
use mkq_core::CostKind;

mod commands;
mod config;

use commands::CliError;
use config::{ConfigError, ExperimentConfig, SolverKind};

/// Regularized Monge-Kantorovich quantiles from entropic optimal transport,
/// solved by stochastic gradient descent on Fourier coefficients.
///
/// Settings come from an optional flat JSON file (--config); flags override
/// it. Every run writes its resolved config.json into the output directory.
/// MKQ_THREADS caps the number of worker threads.
#[derive(Parser)]
#[command(name = "mkq", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the dual potential on a preset or CSV sample and save the estimator.
    Solve(SolveArgs),
    /// Evaluate a saved estimator on a CSV of query points.
    Map(MapArgs),
    /// Quantile contours of a 2D target through the polar formulation.
    Contour(ContourArgs),
    /// Race solvers to an MSE threshold on linear-map problems.
    Bench(BenchArgs),
    /// Empirical convexity certificate of a saved estimator's potential.
    Certify(CertifyArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: mkq-out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolverFlags {
    /// beta1d, banana2d, linear_map_<d>, or a CSV file of observations.
    #[arg(long)]
    preset: Option<String>,
    /// quadratic, torus, torus_squared or polar.
    #[arg(long, value_parser = parse_cost)]
    cost: Option<CostKind>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Base learning rate.
    #[arg(long)]
    gamma: Option<f64>,
    /// Step-size decay exponent in (0.5, 1].
    #[arg(long)]
    c_exponent: Option<f64>,
    /// Frequency weight exponent: w = |λ|^-alpha.
    #[arg(long)]
    alpha: Option<f64>,
    /// Grid sizes per axis, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// SGD iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Number of observations drawn from the preset target.
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SolverFlags {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        cfg.preset = self.preset.clone();
        cfg.cost = self.cost;
        cfg.epsilon = self.epsilon;
        cfg.gamma = self.gamma;
        cfg.c_exponent = self.c_exponent;
        cfg.alpha = self.alpha;
        cfg.grid = self.grid.clone();
        cfg.iters = self.iters;
        cfg.record_every = self.record_every;
        cfg.sample_size = self.sample_size;
        cfg.seed = self.seed;
    }
}

fn parse_cost(s: &str) -> Result<CostKind, String> {
    s.parse().map_err(|e: mkq_core::Error| e.to_string())
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solver: SolverFlags,
    /// Only fft solves; the baselines run under bench.
    #[arg(long = "solver", value_enum)]
    solver_kind: Option<SolverKind>,
}

#[derive(Args)]
struct MapArgs {
    #[command(flatten)]
    common: Common,
    /// Estimator JSON written by solve or contour.
    #[arg(long)]
    estimator: Option<PathBuf>,
    /// CSV of query points, one per row.
    #[arg(long)]
    queries: Option<PathBuf>,
}

#[derive(Args)]
struct ContourArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solver: SolverFlags,
    /// Reuse a saved polar estimator instead of solving.
    #[arg(long)]
    estimator: Option<PathBuf>,
    /// Contour levels in (0, 1], comma separated [default: 0.2,0.3,...,1.0].
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// Points per contour [default: 64].
    #[arg(long)]
    angles: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// A linear_map_<d> preset; same as --dims d.
    #[arg(long)]
    preset: Option<String>,
    /// Solvers to race, comma separated [default: fft,semidiscrete,sinkhorn].
    #[arg(long, value_enum, value_delimiter = ',')]
    race: Option<Vec<SolverKind>>,
    /// Problem dimensions, comma separated [default: 2].
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// FFT base learning rate [default: 2 epsilon].
    #[arg(long)]
    gamma: Option<f64>,
    /// FFT step-size decay exponent [default: 0.51].
    #[arg(long)]
    c_exponent: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Grid sizes for fft and sinkhorn [default: 20,20 in 2D, 10,10,10 in 3D, 6,6,6,6 in 4D].
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// SGD iterations before a run is censored [default: 200000].
    #[arg(long)]
    iters: Option<usize>,
    /// Number of observations n [default: 10000].
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Probe MSE threshold [default: 1e-2].
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Probe points for the MSE [default: 500].
    #[arg(long)]
    probes: Option<usize>,
    /// Wall-clock budget per run, in solver seconds.
    #[arg(long)]
    time_budget_s: Option<f64>,
    /// Give every replicate the same seed.
    #[arg(long)]
    shared_seed: bool,
    /// Semi-discrete base learning rate [default: 0.02 n].
    #[arg(long)]
    semidiscrete_gamma: Option<f64>,
    #[arg(long)]
    semidiscrete_c_exponent: Option<f64>,
    /// Sinkhorn sweeps before a run is censored [default: 2000].
    #[arg(long)]
    sinkhorn_iters: Option<usize>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    estimator: Option<PathBuf>,
    /// Sample to certify on [default: the estimator's observations].
    #[arg(long)]
    queries: Option<PathBuf>,
}

fn with_file(common: &Common, flags: ExperimentConfig) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.overlay(&flags);
    if common.out.is_some() {
        cfg.output = common.out.clone();
    }
    Ok(cfg)
}

fn dispatch(cmd: Cmd) -> Result<String, CliError> {
    match cmd {
        Cmd::Solve(a) => {
            let mut flags = ExperimentConfig {
                solver: a.solver_kind,
                ..Default::default()
            };
            a.solver.apply(&mut flags);
            commands::solve(&with_file(&a.common, flags)?)
        }
        Cmd::Map(a) => {
            let flags = ExperimentConfig {
                estimator: a.estimator,
                queries: a.queries,
                ..Default::default()
            };
            commands::map(&with_file(&a.common, flags)?)
        }
        Cmd::Contour(a) => {
            let mut flags = ExperimentConfig {
                estimator: a.estimator,
                levels: a.levels,
                angles: a.angles,
                ..Default::default()
            };
            a.solver.apply(&mut flags);
            commands::contour(&with_file(&a.common, flags)?)
        }
        Cmd::Bench(a) => {
            let flags = ExperimentConfig {
                preset: a.preset,
                race: a.race,
                dims: a.dims,
                epsilon: a.epsilon,
                gamma: a.gamma,
                c_exponent: a.c_exponent,
                alpha: a.alpha,
                grid: a.grid,
                iters: a.iters,
                sample_size: a.sample_size,
                seed: a.seed,
                threshold: a.threshold,
                replicates: a.replicates,
                probes: a.probes,
                time_budget_s: a.time_budget_s,
                shared_seed: a.shared_seed.then_some(true),
                semidiscrete_gamma: a.semidiscrete_gamma,
                semidiscrete_c_exponent: a.semidiscrete_c_exponent,
                sinkhorn_iters: a.sinkhorn_iters,
                ..Default::default()
            };
            commands::bench(&with_file(&a.common, flags)?)
        }
        Cmd::Certify(a) => {
            let flags = ExperimentConfig {
                estimator: a.estimator,
                queries: a.queries,
                ..Default::default()
            };
            commands::certify(&with_file(&a.common, flags)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = with_thread_cap(|| dispatch(cli.command))
        .map_err(|e| CliError::Config(ConfigError(e.to_string())))
        .and_then(|r| r);
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::FAILURE,
            }
        }
    }
}
