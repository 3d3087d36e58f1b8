//! Preconditioned stochastic gradient descent on Fourier coefficients.
//!
//! Each iteration draws one target point `y`, synthesizes `u` from `θ` with an
//! inverse FFT, forms the Gibbs density `F_{θ,y}` on the grid and takes its
//! forward FFT as the gradient:
//!
//! ```text
//! θ_λ ← θ_λ − γ_n w_λ F̂_λ,   γ_n = γ (n + 1)^{-c}
//! ```
//!
//! so the per-iteration cost is two transforms and an `O(p)` update.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::costs::{CostEvaluator, CostKind};
use crate::distributions::{derive_seed, seeded_rng, ObservationSet, Sampler, SeededRng};
use crate::eot::{check_epsilon, normalize_exponents, DualState};
use crate::error::{invalid, Error, Result};
use crate::grid::{make_weights, CoefficientVector, GridSpec, WeightVector};
use crate::spectral::{SpectralPlan, Workspace};

/// Sub-seed index used to drive the observation stream of a run.
const STREAM_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub epsilon: f64,
    /// Base learning rate `γ`.
    pub gamma: f64,
    /// Decay exponent `c` of `γ_n = γ (n+1)^{-c}`, in `(½, 1]`.
    pub c_exponent: f64,
    /// Weight exponent: `w_λ = ‖λ‖^{-α}`.
    pub alpha: f64,
    pub grid: GridSpec,
    pub cost_kind: CostKind,
    pub max_iters: usize,
    pub seed: u64,
    pub record_every: usize,
}

impl SolverConfig {
    /// Defaults: `γ = ε`, `c = ¾`, `α = 2` in dimension one and `α = 0`
    /// otherwise (including polar grids).
    pub fn new(grid: GridSpec, cost_kind: CostKind, epsilon: f64) -> Self {
        let alpha = if grid.dims() == 1 { 2.0 } else { 0.0 };
        Self {
            epsilon,
            gamma: epsilon,
            c_exponent: 0.75,
            alpha,
            grid,
            cost_kind,
            max_iters: 100_000,
            seed: 0,
            record_every: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be positive, got {}", self.gamma)));
        }
        if !(self.c_exponent > 0.5 && self.c_exponent <= 1.0) {
            return Err(invalid(
                "c_exponent",
                format!("must lie in (0.5, 1], got {}", self.c_exponent),
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", format!("must be >= 0, got {}", self.alpha)));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every", "must be at least 1"));
        }
        self.cost_kind.check_dims(self.grid.dims())
    }

    /// `γ_n = γ (n + 1)^{-c}` for the 0-based iteration counter `n`.
    pub fn step_size(&self, n: u64) -> f64 {
        self.gamma * ((n + 1) as f64).powf(-self.c_exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub coeffs: CoefficientVector,
    /// Number of steps taken so far.
    pub iter: u64,
    pub weights: WeightVector,
    /// Running mean of `h_ε(θ_k, Y_{k+1})` over the steps taken.
    pub avg_objective: f64,
}

impl SolverState {
    pub fn initial(config: &SolverConfig) -> Result<Self> {
        Self::with_coeffs(config, CoefficientVector::zeros(&config.grid))
    }

    pub fn with_coeffs(config: &SolverConfig, coeffs: CoefficientVector) -> Result<Self> {
        if coeffs.grid() != &config.grid {
            return Err(Error::DimensionMismatch {
                expected: config.grid.len(),
                got: coeffs.len(),
            });
        }
        Ok(Self {
            weights: make_weights(&config.grid.frequencies(), config.alpha)?,
            coeffs,
            iter: 0,
            avg_objective: 0.0,
        })
    }

    pub fn dual_state(&self, config: &SolverConfig) -> Result<DualState> {
        DualState::new(self.coeffs.clone(), config.epsilon, config.cost_kind)
    }
}

/// Averaged objective (and optionally MSE) at checkpoints of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iters: Vec<u64>,
    pub avg_objective: Vec<f64>,
    pub mse: Vec<Option<f64>>,
    pub elapsed_s: Vec<f64>,
}

impl RunRecord {
    pub fn push(&mut self, iter: u64, avg_objective: f64, mse: Option<f64>, elapsed_s: f64) {
        self.iters.push(iter);
        self.avg_objective.push(avg_objective);
        self.mse.push(mse);
        self.elapsed_s.push(elapsed_s);
    }

    pub fn len(&self) -> usize {
        self.iters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iters.is_empty()
    }

    /// Same iterations, objectives and MSE values; wall-clock times are ignored.
    pub fn same_trajectory(&self, other: &RunRecord) -> bool {
        self.iters == other.iters
            && self.mse == other.mse
            && self
                .avg_objective
                .iter()
                .zip(&other.avg_objective)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.avg_objective.len() == other.avg_objective.len()
    }

    /// CSV with columns `iter,avg_objective,mse,elapsed_s`; a missing MSE is an
    /// empty field.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "avg_objective", "mse", "elapsed_s"])?;
        for i in 0..self.len() {
            w.write_record([
                self.iters[i].to_string(),
                format!("{:e}", self.avg_objective[i]),
                self.mse[i].map(|m| format!("{m:e}")).unwrap_or_default(),
                format!("{:e}", self.elapsed_s[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Where the observations `Y_1, Y_2, …` come from.
#[derive(Clone, Copy)]
pub enum Stream<'a> {
    /// A finite sample, cycled in epochs with a fresh shuffle each epoch.
    Sample(&'a ObservationSet),
    /// Fresh i.i.d. draws.
    Sampler(&'a dyn Sampler),
}

impl Stream<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Stream::Sample(obs) => obs.dim(),
            Stream::Sampler(s) => s.dim(),
        }
    }
}

/// Iterator state over a [`Stream`]; deterministic given the seed.
pub struct StreamCursor<'a> {
    stream: Stream<'a>,
    rng: SeededRng,
    order: Vec<usize>,
    pos: usize,
    buf: Vec<f64>,
}

impl<'a> StreamCursor<'a> {
    pub fn new(stream: Stream<'a>, seed: u64) -> Result<Self> {
        if let Stream::Sample(obs) = stream {
            if obs.is_empty() {
                return Err(Error::EmptyObservations);
            }
        }
        let order = match stream {
            Stream::Sample(obs) => (0..obs.len()).collect(),
            Stream::Sampler(_) => Vec::new(),
        };
        Ok(Self {
            buf: vec![0.0; stream.dim()],
            pos: order.len(),
            order,
            rng: seeded_rng(seed),
            stream,
        })
    }

    pub fn next_point(&mut self) -> &[f64] {
        match self.stream {
            Stream::Sample(obs) => {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                let j = self.order[self.pos];
                self.pos += 1;
                obs.point(j)
            }
            Stream::Sampler(s) => {
                s.sample_into(&mut self.rng, &mut self.buf);
                &self.buf
            }
        }
    }
}

/// The stochastic solver with its transform plans and scratch buffers.
pub struct FourierSgd {
    config: SolverConfig,
    plan: SpectralPlan,
    cost: CostEvaluator,
    state: SolverState,
    u: Vec<f64>,
    density: Vec<f64>,
    grad: Vec<Complex64>,
    ws: Workspace,
}

impl FourierSgd {
    pub fn new(config: SolverConfig) -> Result<Self> {
        let state = SolverState::initial(&config)?;
        Self::from_state(config, state)
    }

    pub fn from_state(config: SolverConfig, state: SolverState) -> Result<Self> {
        config.validate()?;
        if state.coeffs.grid() != &config.grid {
            return Err(Error::DimensionMismatch {
                expected: config.grid.len(),
                got: state.coeffs.len(),
            });
        }
        let p = config.grid.len();
        Ok(Self {
            plan: SpectralPlan::new(&config.grid),
            cost: CostEvaluator::for_grid(config.cost_kind, &config.grid)?,
            state,
            u: vec![0.0; p],
            density: vec![0.0; p],
            grad: vec![Complex64::new(0.0, 0.0); p],
            ws: Workspace::default(),
            config,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn into_state(self) -> SolverState {
        self.state
    }

    pub fn dual_state(&self) -> Result<DualState> {
        self.state.dual_state(&self.config)
    }

    /// One iteration with observation `y`.
    pub fn step(&mut self, y: &[f64]) -> Result<()> {
        self.cost.check_target(y)?;
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        self.step_unchecked(y);
        Ok(())
    }

    fn step_unchecked(&mut self, y: &[f64]) {
        let eps = self.config.epsilon;
        let n = self.state.iter;
        let gamma_n = self.config.step_size(n);

        self.plan
            .inverse_into(self.state.coeffs.as_slice(), &mut self.u, &mut self.ws);
        self.cost.fill(y, &mut self.density);
        let inv_eps = 1.0 / eps;
        for (f, &u) in self.density.iter_mut().zip(&self.u) {
            *f = (u - *f) * inv_eps;
        }
        let lme = normalize_exponents(&mut self.density);
        let h = eps * lme + eps;

        self.plan
            .forward_into(&self.density, &mut self.grad, &mut self.ws);
        let weights = self.state.weights.as_slice();
        let coeffs = self.state.coeffs.as_mut_slice();
        for i in 1..coeffs.len() {
            coeffs[i] -= self.grad[i] * (gamma_n * weights[i]);
        }

        self.state.iter = n + 1;
        self.state.avg_objective += (h - self.state.avg_objective) / (n + 1) as f64;
    }

    /// Runs `iters` steps drawing from `cursor`.
    pub fn advance(&mut self, cursor: &mut StreamCursor<'_>, iters: usize) -> Result<()> {
        if cursor.stream.dim() != self.config.grid.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.config.grid.dims(),
                got: cursor.stream.dim(),
            });
        }
        // observation sets and samplers only yield finite points
        for _ in 0..iters {
            self.step_unchecked(cursor.next_point());
        }
        Ok(())
    }
}

/// Pure single step: returns the state after one iteration with `y`.
pub fn step(state: &SolverState, config: &SolverConfig, y: &[f64]) -> Result<SolverState> {
    let mut solver = FourierSgd::from_state(config.clone(), state.clone())?;
    solver.step(y)?;
    Ok(solver.into_state())
}

/// Full run of `config.max_iters` iterations over `stream`.
pub fn run(config: &SolverConfig, stream: Stream<'_>) -> Result<(SolverState, RunRecord)> {
    let mut solver = FourierSgd::new(config.clone())?;
    let mut cursor = StreamCursor::new(stream, derive_seed(config.seed, STREAM_SEED))?;
    let mut record = RunRecord::default();
    let start = Instant::now();
    let mut done = 0;
    while done < config.max_iters {
        let chunk = config.record_every.min(config.max_iters - done);
        solver.advance(&mut cursor, chunk)?;
        done += chunk;
        let st = solver.state();
        record.push(st.iter, st.avg_objective, None, start.elapsed().as_secs_f64());
    }
    Ok((solver.into_state(), record))
}

/// [`run`] on a polar `(radius, angle)` grid with the polar quadratic cost.
pub fn run_polar(config: &SolverConfig, stream: Stream<'_>) -> Result<(SolverState, RunRecord)> {
    if !config.cost_kind.is_polar() {
        return Err(Error::InvalidCost {
            kind: config.cost_kind.name(),
            reason: "polar runs need the polar cost".into(),
        });
    }
    run(config, stream)
}
