//! Error metrics, pointwise error curves and time-to-threshold races.

use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{SemiDiscreteSgd, SemiDiscreteState, SinkhornSolver};
use crate::costs::CostKind;
use crate::distributions::{derive_seed, LinearMapTarget, ObservationSet, Sampler, UniformCube};
use crate::entropic_map::{barycentric_projection, build_estimator};
use crate::error::{invalid, Error, Result};
use crate::grid::GridSpec;
use crate::sgd::{FourierSgd, SolverConfig, Stream, StreamCursor};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "MKQ_THREADS";

/// Runs `f` inside a pool sized by `MKQ_THREADS` (rayon's default otherwise).
pub fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| invalid("MKQ_THREADS", format!("expected a positive integer, got {v:?}")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid("MKQ_THREADS", e.to_string()))?;
    Ok(pool.install(f))
}

/// Mean over probes of `‖Q̂(X) − Q(X)‖²`.
pub fn mse<E, T>(estimated: E, truth: T, probe: &ObservationSet) -> Result<f64>
where
    E: Fn(&[f64]) -> Result<Vec<f64>>,
    T: Fn(&[f64]) -> Vec<f64>,
{
    if probe.is_empty() {
        return Err(Error::EmptyObservations);
    }
    let mut total = 0.0;
    for x in probe.iter() {
        let a = estimated(x)?;
        let b = truth(x);
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: b.len(),
                got: a.len(),
            });
        }
        total += a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
    }
    Ok(total / probe.len() as f64)
}

/// Generalized inverse of the empirical CDF: the smallest order statistic
/// `y_(k)` with `k/J ≥ u`.
pub fn empirical_quantile(sorted: &[f64], u: f64) -> f64 {
    let j = sorted.len();
    let k = ((u * j as f64).ceil() as usize).clamp(1, j);
    sorted[k - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseCurve {
    pub xs: Vec<f64>,
    /// Regularized estimator, averaged squared error at each `x`.
    pub regularized: Vec<f64>,
    /// Empirical quantile baseline.
    pub empirical: Vec<f64>,
    pub replicates: usize,
    pub sample_size: usize,
}

impl PointwiseCurve {
    /// CSV with columns `x,regularized_mse,empirical_mse`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "regularized_mse", "empirical_mse"])?;
        for i in 0..self.xs.len() {
            w.write_record([
                format!("{}", self.xs[i]),
                format!("{:e}", self.regularized[i]),
                format!("{:e}", self.empirical[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// For each replicate: a fresh `J`-sample, a full solver run over it, and the
/// squared errors of both estimators at `xs`. Replicates run in parallel and
/// are averaged in index order.
pub fn pointwise_mse_curve(
    solver: &SolverConfig,
    target: &dyn Sampler,
    truth: &(dyn Fn(f64) -> f64 + Sync),
    xs: &[f64],
    sample_size: usize,
    replicates: usize,
    seed: u64,
) -> Result<PointwiseCurve> {
    if solver.grid.dims() != 1 || target.dim() != 1 {
        return Err(invalid("dims", "pointwise curves are one-dimensional"));
    }
    if replicates < 2 {
        return Err(invalid("replicates", "need at least 2"));
    }
    if sample_size == 0 {
        return Err(Error::EmptyObservations);
    }
    let q0: Vec<f64> = xs.iter().map(|&x| truth(x)).collect();
    let per_rep = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<(Vec<f64>, Vec<f64>)> {
            let sample = target.sample(sample_size, derive_seed(seed, 2 * r as u64));
            let mut cfg = solver.clone();
            cfg.seed = derive_seed(seed, 2 * r as u64 + 1);
            cfg.record_every = cfg.max_iters;
            let (state, _) = crate::sgd::run(&cfg, Stream::Sample(&sample))?;
            let est = build_estimator(&state.dual_state(&cfg)?, &sample)?;
            let mut sorted = sample.as_flat().to_vec();
            sorted.sort_by(f64::total_cmp);
            let mut reg = Vec::with_capacity(xs.len());
            let mut emp = Vec::with_capacity(xs.len());
            for (&x, &q) in xs.iter().zip(&q0) {
                reg.push((est.evaluate_map(&[x])?[0] - q).powi(2));
                emp.push((empirical_quantile(&sorted, x) - q).powi(2));
            }
            Ok((reg, emp))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut regularized = vec![0.0; xs.len()];
    let mut empirical = vec![0.0; xs.len()];
    for (reg, emp) in &per_rep {
        for i in 0..xs.len() {
            regularized[i] += reg[i];
            empirical[i] += emp[i];
        }
    }
    let scale = 1.0 / replicates as f64;
    regularized.iter_mut().chain(empirical.iter_mut()).for_each(|v| *v *= scale);
    Ok(PointwiseCurve {
        xs: xs.to_vec(),
        regularized,
        empirical,
        replicates,
        sample_size,
    })
}

/// Solver under test in a race.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverSpec {
    Fft { config: SolverConfig },
    Semidiscrete { epsilon: f64, gamma: f64, c_exponent: f64 },
    Sinkhorn { epsilon: f64, grid: GridSpec },
}

impl SolverSpec {
    pub fn label(&self) -> &'static str {
        match self {
            SolverSpec::Fft { .. } => "fft",
            SolverSpec::Semidiscrete { .. } => "semidiscrete",
            SolverSpec::Sinkhorn { .. } => "sinkhorn",
        }
    }
}

/// Linear-map target in dimension `d` from the uniform cube, with `n`
/// observations and `m` probe points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub dim: usize,
    pub n_obs: usize,
    pub probes: usize,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn label(&self) -> String {
        format!("linear_map_{}", self.dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceOptions {
    pub threshold: f64,
    /// Iterations (SGD steps or Sinkhorn sweeps) before a run is censored.
    pub max_iters: usize,
    /// Optional wall-clock budget on solver time.
    pub time_budget_s: Option<f64>,
    pub replicates: usize,
    /// When set, every replicate reuses replicate 0's seeds.
    pub shared_seed: bool,
}

impl Default for RaceOptions {
    fn default() -> Self {
        Self {
            threshold: 1e-2,
            max_iters: 200_000,
            time_budget_s: None,
            replicates: 10,
            shared_seed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iter: u64,
    pub seconds: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub checkpoints: Vec<Checkpoint>,
    /// Solver seconds until the MSE first fell below the threshold; `None`
    /// when the budget ran out first.
    pub seconds_to_threshold: Option<f64>,
    pub iters_to_threshold: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub completed: usize,
    pub censored: usize,
    pub mean_seconds: Option<f64>,
    pub sd_seconds: Option<f64>,
    pub mean_iters: Option<f64>,
    pub sd_iters: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub solver: String,
    pub problem: String,
    pub n_obs: usize,
    pub threshold: f64,
    pub replicates: Vec<ReplicateResult>,
    pub summary: Summary,
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(sd))
}

impl Summary {
    pub fn from_replicates(reps: &[ReplicateResult]) -> Self {
        let secs: Vec<f64> = reps.iter().filter_map(|r| r.seconds_to_threshold).collect();
        let iters: Vec<f64> = reps
            .iter()
            .filter_map(|r| r.iters_to_threshold.map(|i| i as f64))
            .collect();
        let (mean_seconds, sd_seconds) = mean_sd(&secs);
        let (mean_iters, sd_iters) = mean_sd(&iters);
        Self {
            completed: secs.len(),
            censored: reps.len() - secs.len(),
            mean_seconds,
            sd_seconds,
            mean_iters,
            sd_iters,
        }
    }
}

impl BenchReport {
    /// Long-format CSV: `solver,problem,n,replicate,iter,seconds,mse`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_reports_csv(std::slice::from_ref(self), out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn write_reports_csv<W: Write>(reports: &[BenchReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["solver", "problem", "n", "replicate", "iter", "seconds", "mse"])?;
    for rep in reports {
        for r in &rep.replicates {
            for c in &r.checkpoints {
                w.write_record([
                    rep.solver.clone(),
                    rep.problem.clone(),
                    rep.n_obs.to_string(),
                    r.replicate.to_string(),
                    c.iter.to_string(),
                    format!("{:e}", c.seconds),
                    format!("{:e}", c.mse),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs one replicate, timing solver work only.
fn race_replicate(
    solver: &SolverSpec,
    problem: &ProblemSpec,
    opts: &RaceOptions,
    replicate: usize,
) -> Result<ReplicateResult> {
    let rep_seed = derive_seed(problem.seed, if opts.shared_seed { 0 } else { replicate as u64 });
    let target = LinearMapTarget::new(problem.dim)?;
    let source = UniformCube { dim: problem.dim };
    let obs = target.sample(problem.n_obs, derive_seed(rep_seed, 0));
    let probe = source.sample(problem.probes, derive_seed(rep_seed, 1));
    let truth = |x: &[f64]| target.apply(x);
    let every = (opts.max_iters / 100).max(1);
    let budget = opts.time_budget_s.map(Duration::from_secs_f64);

    let mut runner: Box<dyn RaceRunner + '_> = match solver {
        SolverSpec::Fft { config } => {
            let mut cfg = config.clone();
            cfg.seed = derive_seed(rep_seed, 2);
            Box::new(FftRunner::new(cfg, &obs)?)
        }
        SolverSpec::Semidiscrete {
            epsilon,
            gamma,
            c_exponent,
        } => {
            let st = SemiDiscreteState::with_schedule(obs.len(), *epsilon, CostKind::StandardQuadratic, *gamma, *c_exponent)?;
            Box::new(SemiDiscreteSgd::new(st, &source, &obs, derive_seed(rep_seed, 2))?)
        }
        SolverSpec::Sinkhorn { epsilon, grid } => {
            Box::new(SinkhornRunner {
                solver: SinkhornSolver::new(grid, &obs, CostKind::StandardQuadratic, *epsilon)?,
                obs: &obs,
            })
        }
    };

    let mut elapsed = Duration::ZERO;
    let mut done = 0usize;
    let mut checkpoints = Vec::new();
    let mut hit = None;
    while done < opts.max_iters {
        let chunk = every.min(opts.max_iters - done);
        let t0 = Instant::now();
        runner.advance(chunk)?;
        elapsed += t0.elapsed();
        done += chunk;
        let map = runner.snapshot()?;
        let err = mse(|x| Ok(map(x)), truth, &probe)?;
        checkpoints.push(Checkpoint {
            iter: done as u64,
            seconds: elapsed.as_secs_f64(),
            mse: err,
        });
        if err < opts.threshold {
            hit = Some((elapsed.as_secs_f64(), done as u64));
            break;
        }
        if budget.is_some_and(|b| elapsed >= b) {
            break;
        }
    }
    Ok(ReplicateResult {
        replicate,
        checkpoints,
        seconds_to_threshold: hit.map(|h| h.0),
        iters_to_threshold: hit.map(|h| h.1),
    })
}

type MapFn<'a> = Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>;

trait RaceRunner {
    fn advance(&mut self, iters: usize) -> Result<()>;
    /// Current map estimate; building it is not timed.
    fn snapshot(&self) -> Result<MapFn<'_>>;
}

struct FftRunner<'a> {
    solver: FourierSgd,
    cursor: StreamCursor<'a>,
    obs: &'a ObservationSet,
}

impl<'a> FftRunner<'a> {
    fn new(config: SolverConfig, obs: &'a ObservationSet) -> Result<Self> {
        let cursor = StreamCursor::new(Stream::Sample(obs), config.seed)?;
        Ok(Self {
            solver: FourierSgd::new(config)?,
            cursor,
            obs,
        })
    }
}

impl RaceRunner for FftRunner<'_> {
    fn advance(&mut self, iters: usize) -> Result<()> {
        self.solver.advance(&mut self.cursor, iters)
    }

    fn snapshot(&self) -> Result<MapFn<'_>> {
        let est = build_estimator(&self.solver.dual_state()?, self.obs)?;
        Ok(Box::new(move |x| est.evaluate_map(x).expect("probe dimension checked")))
    }
}

impl RaceRunner for SemiDiscreteSgd<'_> {
    fn advance(&mut self, iters: usize) -> Result<()> {
        SemiDiscreteSgd::advance(self, iters);
        Ok(())
    }

    fn snapshot(&self) -> Result<MapFn<'_>> {
        Ok(Box::new(move |x| self.map(x).expect("probe dimension checked")))
    }
}

struct SinkhornRunner<'a> {
    solver: SinkhornSolver,
    obs: &'a ObservationSet,
}

impl RaceRunner for SinkhornRunner<'_> {
    fn advance(&mut self, iters: usize) -> Result<()> {
        // stopping on tolerance would freeze the map; run the full chunk
        self.solver.iterate(iters, 0.0);
        Ok(())
    }

    fn snapshot(&self) -> Result<MapFn<'_>> {
        let g = self.solver.g().to_vec();
        let eps = self.solver.epsilon();
        let obs = self.obs;
        Ok(Box::new(move |x| barycentric_projection(CostKind::StandardQuadratic, eps, &g, obs, x)))
    }
}

/// Races `solver` on `problem` until the probe MSE drops below the threshold,
/// over `opts.replicates` independent replicates run in parallel.
pub fn time_to_threshold(solver: &SolverSpec, problem: &ProblemSpec, opts: &RaceOptions) -> Result<BenchReport> {
    if !(opts.threshold > 0.0) {
        return Err(invalid("threshold", format!("must be positive, got {}", opts.threshold)));
    }
    if opts.replicates == 0 {
        return Err(invalid("replicates", "need at least 1"));
    }
    if opts.max_iters == 0 {
        return Err(invalid("max_iters", "must be at least 1"));
    }
    let reps = (0..opts.replicates)
        .into_par_iter()
        .map(|r| race_replicate(solver, problem, opts, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        solver: solver.label().to_string(),
        problem: problem.label(),
        n_obs: problem.n_obs,
        threshold: opts.threshold,
        summary: Summary::from_replicates(&reps),
        replicates: reps,
    })
}
