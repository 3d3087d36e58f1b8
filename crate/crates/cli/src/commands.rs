//! One function per subcommand. Each returns the one-line summary to print.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use mkq_core::bench::{time_to_threshold, write_reports_csv};
use mkq_core::entropic_map::write_contours_csv;
use mkq_core::sgd::{run, Stream};
use mkq_core::{build_estimator, quantile_contour, DualState, EntropicMapEstimator, ObservationSet};

use crate::config::{config_err, BenchSetup, Command, ConfigError, ExperimentConfig, SolveSetup, SolverKind};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Runtime(e) => {
                // library errors repeat their source in their own message
                write!(f, "error: {e}")?;
                let mut prev = e.to_string();
                for cause in e.chain().skip(1) {
                    let msg = cause.to_string();
                    if !prev.ends_with(&msg) {
                        write!(f, ": {msg}")?;
                    }
                    prev = msg;
                }
                Ok(())
            }
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<mkq_core::Error> for CliError {
    fn from(e: mkq_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

const DEFAULT_LEVELS: [f64; 9] = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Keys that configure a solver run, which a saved estimator makes moot.
const SOLVER_KEYS: &[&str] = &[
    "preset", "cost", "epsilon", "gamma", "c_exponent", "alpha", "grid", "iters", "record_every", "sample_size",
    "seed",
];

struct Output {
    dir: PathBuf,
}

impl Output {
    fn create(cfg: &ExperimentConfig) -> CliResult<Self> {
        let dir = cfg.output_dir();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn writer(&self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.path(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(file))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut w = self.writer(name)?;
        serde_json::to_writer_pretty(&mut w, value).context(name.to_string())?;
        writeln!(w).context(name.to_string())?;
        w.flush().context(name.to_string())?;
        Ok(())
    }
}

fn existing_file(field: &str, path: &Option<PathBuf>) -> Result<PathBuf, ConfigError> {
    let path = path.clone().ok_or_else(|| config_err(field, "is required"))?;
    if path.is_file() {
        Ok(path)
    } else {
        Err(config_err(field, format!("{} is not a file", path.display())))
    }
}

fn load_estimator(path: &Path) -> CliResult<EntropicMapEstimator> {
    Ok(EntropicMapEstimator::load_json(path).with_context(|| format!("loading {}", path.display()))?)
}

fn read_points(path: &Path) -> CliResult<ObservationSet> {
    Ok(ObservationSet::read_csv(path).with_context(|| format!("reading {}", path.display()))?)
}

/// Solves with the FFT solver and saves sample, record and estimator.
fn solve_and_save(setup: &SolveSetup, out: &Output) -> CliResult<(EntropicMapEstimator, f64)> {
    let obs = &setup.observations;
    obs.write_csv(out.path("sample.csv"))?;
    let (state, record) = run(&setup.solver, Stream::Sample(obs))?;
    record.save_csv(out.path("run_record.csv"))?;
    let est = build_estimator(&state.dual_state(&setup.solver)?, obs)?;
    est.save_json(out.path("estimator.json"))?;
    Ok((est, state.avg_objective))
}

pub fn solve(cfg: &ExperimentConfig) -> CliResult<String> {
    cfg.check_keys(Command::Solve)?;
    if let Some(kind) = cfg.solver.filter(|&k| k != SolverKind::Fft) {
        return Err(config_err(
            "solver",
            format!("solve runs the fft solver; race {kind:?} against it with bench").to_lowercase(),
        )
        .into());
    }
    let setup = SolveSetup::resolve(cfg, false)?;
    let out = Output::create(cfg)?;
    out.json("config.json", &setup.resolved(cfg, Command::Solve))?;
    let (est, avg) = solve_and_save(&setup, &out)?;

    if setup.observations.dim() == 1 {
        let mut w = out.writer("quantile.csv")?;
        writeln!(w, "x,q").context("quantile.csv")?;
        for k in 0..=100 {
            let x = k as f64 / 100.0;
            writeln!(w, "{x},{}", est.evaluate_map(&[x])?[0]).context("quantile.csv")?;
        }
        w.flush().context("quantile.csv")?;
    }
    let s = &setup.solver;
    Ok(format!(
        "solve: {} d={} J={} eps={} iters={} avg_objective={:.6e} -> {}",
        setup.preset,
        setup.observations.dim(),
        setup.observations.len(),
        s.epsilon,
        s.max_iters,
        avg,
        out.dir.display()
    ))
}

pub fn map(cfg: &ExperimentConfig) -> CliResult<String> {
    cfg.check_keys(Command::Map)?;
    let est_path = existing_file("estimator", &cfg.estimator)?;
    let q_path = existing_file("queries", &cfg.queries)?;
    let out = Output::create(cfg)?;
    out.json(
        "config.json",
        &ExperimentConfig {
            command: Some(Command::Map),
            estimator: Some(est_path.clone()),
            queries: Some(q_path.clone()),
            output: Some(out.dir.clone()),
            ..Default::default()
        },
    )?;
    let est = load_estimator(&est_path)?;
    let queries = read_points(&q_path)?;
    let mapped = est.evaluate_many(&queries)?;

    let mut w = out.writer("map.csv")?;
    let dx = queries.dim();
    let dq = mapped.dim();
    let header: Vec<String> = (0..dx).map(|k| format!("x{k}")).chain((0..dq).map(|k| format!("q{k}"))).collect();
    writeln!(w, "{}", header.join(",")).context("map.csv")?;
    for (x, q) in queries.iter().zip(mapped.iter()) {
        let row: Vec<String> = x.iter().chain(q).map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(",")).context("map.csv")?;
    }
    w.flush().context("map.csv")?;
    Ok(format!("map: {} points -> {}", queries.len(), out.path("map.csv").display()))
}

pub fn contour(cfg: &ExperimentConfig) -> CliResult<String> {
    cfg.check_keys(Command::Contour)?;
    let levels = cfg.levels.clone().unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
    if levels.is_empty() {
        return Err(config_err("levels", "name at least one level").into());
    }
    if let Some(&l) = levels.iter().find(|&&l| !(l > 0.0 && l <= 1.0)) {
        return Err(config_err("levels", format!("must lie in (0, 1], got {l}")).into());
    }
    let angles = cfg.angles.unwrap_or(64);
    if angles == 0 {
        return Err(config_err("angles", "must be at least 1").into());
    }

    let (est, out) = if let Some(path) = &cfg.estimator {
        let value = serde_json::to_value(cfg).expect("config serializes");
        if let Some(key) = SOLVER_KEYS.iter().find(|k| value.get(**k).is_some()) {
            return Err(config_err(key, "cannot be combined with a saved estimator").into());
        }
        let path = existing_file("estimator", &Some(path.clone()))?;
        let out = Output::create(cfg)?;
        out.json(
            "config.json",
            &ExperimentConfig {
                command: Some(Command::Contour),
                estimator: Some(path.clone()),
                levels: Some(levels.clone()),
                angles: Some(angles),
                output: Some(out.dir.clone()),
                ..Default::default()
            },
        )?;
        let est = load_estimator(&path)?;
        if !est.is_polar() {
            return Err(config_err("estimator", "contours need an estimator solved with the polar cost").into());
        }
        (est, out)
    } else {
        let setup = SolveSetup::resolve(cfg, true)?;
        let out = Output::create(cfg)?;
        let mut resolved = setup.resolved(cfg, Command::Contour);
        resolved.levels = Some(levels.clone());
        resolved.angles = Some(angles);
        out.json("config.json", &resolved)?;
        let (est, _) = solve_and_save(&setup, &out)?;
        (est, out)
    };

    let contours = levels
        .iter()
        .map(|&r| quantile_contour(&est, r, angles))
        .collect::<mkq_core::Result<Vec<_>>>()?;
    write_contours_csv(&contours, out.writer("contours.csv")?)?;
    for c in &contours {
        c.write_csv(out.writer(&format!("contour_r{}.csv", c.level))?)?;
    }
    Ok(format!(
        "contour: {} levels x {} angles, eps={} -> {}",
        levels.len(),
        angles,
        est.epsilon(),
        out.path("contours.csv").display()
    ))
}

#[derive(Serialize)]
struct Certificate {
    epsilon: f64,
    n: usize,
    certificate: f64,
    certified: bool,
}

pub fn certify(cfg: &ExperimentConfig) -> CliResult<String> {
    cfg.check_keys(Command::Certify)?;
    let est_path = existing_file("estimator", &cfg.estimator)?;
    let q_path = match &cfg.queries {
        Some(_) => Some(existing_file("queries", &cfg.queries)?),
        None => None,
    };
    let out = Output::create(cfg)?;
    out.json(
        "config.json",
        &ExperimentConfig {
            command: Some(Command::Certify),
            estimator: Some(est_path.clone()),
            queries: q_path.clone(),
            output: Some(out.dir.clone()),
            ..Default::default()
        },
    )?;
    let est = load_estimator(&est_path)?;
    let sample = match &q_path {
        Some(p) => read_points(p)?,
        None => est.observations().clone(),
    };
    let dual = DualState::new(est.coeffs().clone(), est.epsilon(), est.cost_kind())?;
    let certificate = dual.evaluator()?.convexity_certificate(&sample)?;
    let report = Certificate {
        epsilon: est.epsilon(),
        n: sample.len(),
        certificate,
        certified: certificate > 0.0,
    };
    out.json("certificate.json", &report)?;
    Ok(format!(
        "certify: certificate={certificate:.6e} over {} points ({}) -> {}",
        sample.len(),
        if report.certified { "certified" } else { "not certified" },
        out.path("certificate.json").display()
    ))
}

pub fn bench(cfg: &ExperimentConfig) -> CliResult<String> {
    cfg.check_keys(Command::Bench)?;
    let setup = BenchSetup::resolve(cfg)?;
    let out = Output::create(cfg)?;
    out.json("config.json", &setup.resolved(cfg))?;

    let mut reports = Vec::new();
    for &dim in &setup.dims {
        let problem = setup.problem(dim);
        for &kind in &setup.race {
            reports.push(time_to_threshold(&setup.solver(kind, dim), &problem, &setup.options_for(kind))?);
        }
    }
    write_reports_csv(&reports, out.writer("bench.csv")?)?;
    out.json("bench.json", &reports)?;

    let parts: Vec<String> = reports
        .iter()
        .map(|r| {
            let s = &r.summary;
            let time = match (s.mean_seconds, s.sd_seconds) {
                (Some(m), Some(sd)) => format!("{m:.3}s sd {sd:.3}s"),
                _ => "censored".to_string(),
            };
            format!("{}/{} {} ({}/{})", r.solver, r.problem, time, s.completed, s.completed + s.censored)
        })
        .collect();
    Ok(format!(
        "bench: threshold {:e}: {} -> {}",
        setup.options.threshold,
        parts.join(", "),
        out.path("bench.csv").display()
    ))
}
