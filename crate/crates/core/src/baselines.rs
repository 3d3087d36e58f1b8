//! Comparison solvers: semi-discrete stochastic dual descent on `v ∈ ℝⁿ` and
//! log-domain Sinkhorn between the grid atoms and the observations.

use serde::{Deserialize, Serialize};

use crate::costs::{cost_unchecked, CostKind};
use crate::distributions::{seeded_rng, ObservationSet, Sampler};
use crate::entropic_map::{barycentric_projection, barycentric_weights};
use crate::eot::{check_epsilon, normalize_exponents};
use crate::error::{invalid, Error, Result};
use crate::grid::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiDiscreteState {
    pub v: Vec<f64>,
    pub iter: u64,
    /// `ε = 0` runs the un-regularized subgradient scheme.
    pub epsilon: f64,
    pub gamma: f64,
    pub c_exponent: f64,
    pub cost_kind: CostKind,
    /// Running mean of the sampled integrand.
    pub avg_objective: f64,
}

impl SemiDiscreteState {
    /// `v = 0` with step `γ = ε` (or `γ = 1` when `ε = 0`) and `c = ¾`.
    pub fn new(n: usize, epsilon: f64, cost_kind: CostKind) -> Result<Self> {
        let gamma = if epsilon == 0.0 { 1.0 } else { epsilon };
        Self::with_schedule(n, epsilon, cost_kind, gamma, 0.75)
    }

    pub fn with_schedule(
        n: usize,
        epsilon: f64,
        cost_kind: CostKind,
        gamma: f64,
        c_exponent: f64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyObservations);
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(invalid("epsilon", format!("must be >= 0, got {epsilon}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be positive, got {gamma}")));
        }
        if !(c_exponent > 0.5 && c_exponent <= 1.0) {
            return Err(invalid("c_exponent", format!("must lie in (0.5, 1], got {c_exponent}")));
        }
        Ok(Self {
            v: vec![0.0; n],
            iter: 0,
            epsilon,
            gamma,
            c_exponent,
            cost_kind,
            avg_objective: 0.0,
        })
    }

    fn check(&self, x: &[f64], obs: &ObservationSet) -> Result<()> {
        if obs.len() != self.v.len() {
            return Err(Error::DimensionMismatch {
                expected: self.v.len(),
                got: obs.len(),
            });
        }
        if x.len() != obs.dim() {
            return Err(Error::DimensionMismatch {
                expected: obs.dim(),
                got: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(())
    }
}

/// Writes the gradient of the integrand at `x` into `grad` and returns the
/// integrand value `ε log((1/n) Σ exp((v_j − c_j)/ε)) − mean(v)` (the max for
/// `ε = 0`).
fn integrand_gradient(state: &SemiDiscreteState, x: &[f64], obs: &ObservationSet, grad: &mut [f64]) -> f64 {
    let n = state.v.len();
    let mean_v = state.v.iter().sum::<f64>() / n as f64;
    let inv_n = 1.0 / n as f64;
    if state.epsilon == 0.0 {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (j, y) in obs.iter().enumerate() {
            let val = state.v[j] - cost_unchecked(state.cost_kind, x, y);
            // strict comparison keeps the lowest index on ties
            if val > best_val {
                best_val = val;
                best = j;
            }
        }
        for (j, g) in grad.iter_mut().enumerate() {
            *g = if j == best { 1.0 } else { 0.0 } - inv_n;
        }
        return best_val - mean_v;
    }
    let eps = state.epsilon;
    for ((g, y), &vj) in grad.iter_mut().zip(obs.iter()).zip(&state.v) {
        *g = (vj - cost_unchecked(state.cost_kind, x, y)) / eps;
    }
    let lme = normalize_exponents(grad);
    for g in grad.iter_mut() {
        *g = *g * inv_n - inv_n;
    }
    eps * lme - mean_v
}

/// Sampled integrand of the semi-dual objective.
pub fn semidiscrete_integrand(state: &SemiDiscreteState, x: &[f64], obs: &ObservationSet) -> Result<f64> {
    state.check(x, obs)?;
    let mut grad = vec![0.0; state.v.len()];
    Ok(integrand_gradient(state, x, obs, &mut grad))
}

/// Gradient (or subgradient for `ε = 0`) of the integrand at `x`.
pub fn semidiscrete_gradient(state: &SemiDiscreteState, x: &[f64], obs: &ObservationSet) -> Result<Vec<f64>> {
    state.check(x, obs)?;
    let mut grad = vec![0.0; state.v.len()];
    integrand_gradient(state, x, obs, &mut grad);
    Ok(grad)
}

/// One step `v ← v − γ_k ∇` with a source draw `x`.
pub fn semidiscrete_step(state: &mut SemiDiscreteState, x: &[f64], obs: &ObservationSet) -> Result<()> {
    state.check(x, obs)?;
    let mut grad = vec![0.0; state.v.len()];
    step_with_buffer(state, x, obs, &mut grad);
    Ok(())
}

fn step_with_buffer(state: &mut SemiDiscreteState, x: &[f64], obs: &ObservationSet, grad: &mut [f64]) {
    let h = integrand_gradient(state, x, obs, grad);
    let k = state.iter;
    let gamma_k = state.gamma * ((k + 1) as f64).powf(-state.c_exponent);
    for (v, g) in state.v.iter_mut().zip(grad.iter()) {
        *v -= gamma_k * g;
    }
    state.iter = k + 1;
    state.avg_objective += (h - state.avg_objective) / (k + 1) as f64;
}

/// Runs `iters` steps with source draws from `source`, seeded by `seed`.
pub fn semidiscrete_run(
    state: &mut SemiDiscreteState,
    source: &dyn Sampler,
    obs: &ObservationSet,
    iters: usize,
    seed: u64,
) -> Result<()> {
    let mut rng = seeded_rng(seed);
    let mut x = vec![0.0; source.dim()];
    let mut grad = vec![0.0; state.v.len()];
    state.check(&x, obs)?;
    for _ in 0..iters {
        source.sample_into(&mut rng, &mut x);
        step_with_buffer(state, &x, obs, &mut grad);
    }
    Ok(())
}

/// Resumable wrapper around [`semidiscrete_run`] that keeps its RNG.
pub struct SemiDiscreteSgd<'a> {
    pub state: SemiDiscreteState,
    source: &'a dyn Sampler,
    obs: &'a ObservationSet,
    rng: crate::distributions::SeededRng,
    x: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> SemiDiscreteSgd<'a> {
    pub fn new(
        state: SemiDiscreteState,
        source: &'a dyn Sampler,
        obs: &'a ObservationSet,
        seed: u64,
    ) -> Result<Self> {
        let x = vec![0.0; source.dim()];
        state.check(&x, obs)?;
        Ok(Self {
            grad: vec![0.0; state.v.len()],
            state,
            source,
            obs,
            rng: seeded_rng(seed),
            x,
        })
    }

    pub fn advance(&mut self, iters: usize) {
        for _ in 0..iters {
            self.source.sample_into(&mut self.rng, &mut self.x);
            step_with_buffer(&mut self.state, &self.x, self.obs, &mut self.grad);
        }
    }

    pub fn map(&self, x: &[f64]) -> Result<Vec<f64>> {
        semidiscrete_map(&self.state, self.obs, x)
    }
}

/// `Q̃(x) = Σ_j softmax_j((v_j − c(x, Y_j))/ε) Y_j`.
pub fn semidiscrete_map(state: &SemiDiscreteState, obs: &ObservationSet, x: &[f64]) -> Result<Vec<f64>> {
    state.check(x, obs)?;
    if state.epsilon == 0.0 {
        return Err(invalid(
            "epsilon",
            "the map is undefined for epsilon = 0; use semidiscrete_assign",
        ));
    }
    Ok(barycentric_projection(state.cost_kind, state.epsilon, &state.v, obs, x))
}

/// Softmax weights of [`semidiscrete_map`].
pub fn semidiscrete_weights(state: &SemiDiscreteState, obs: &ObservationSet, x: &[f64]) -> Result<Vec<f64>> {
    state.check(x, obs)?;
    check_epsilon(state.epsilon)?;
    let mut w = vec![0.0; obs.len()];
    barycentric_weights(state.cost_kind, state.epsilon, &state.v, obs, x, &mut w);
    Ok(w)
}

/// Index of the observation minimizing `c(x, Y_j) − v_j` (lowest index on ties).
pub fn semidiscrete_assign(state: &SemiDiscreteState, obs: &ObservationSet, x: &[f64]) -> Result<usize> {
    state.check(x, obs)?;
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (j, y) in obs.iter().enumerate() {
        let val = cost_unchecked(state.cost_kind, x, y) - state.v[j];
        if val < best_val {
            best_val = val;
            best = j;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornResult {
    /// Potential on the grid atoms.
    pub f: Vec<f64>,
    /// Potential on the observations.
    pub g: Vec<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    /// Row-marginal `ℓ∞` error of the returned pair (columns are exact).
    pub marginal_error: f64,
    pub converged: bool,
    /// Row-marginal error after each iteration.
    pub error_history: Vec<f64>,
}

/// Log-domain Sinkhorn between uniform weights on the grid atoms and on the
/// observations. Keeps both `C` and `Cᵀ` so each half-step reads contiguously.
pub struct SinkhornSolver {
    p: usize,
    n: usize,
    epsilon: f64,
    cost: Vec<f64>,
    cost_t: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    f_next: Vec<f64>,
    scratch: Vec<f64>,
    iterations: usize,
    history: Vec<f64>,
}

impl SinkhornSolver {
    pub fn new(grid: &GridSpec, obs: &ObservationSet, kind: CostKind, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if obs.is_empty() {
            return Err(Error::EmptyObservations);
        }
        kind.check_dims(grid.dims())?;
        if obs.dim() != grid.dims() {
            return Err(Error::DimensionMismatch {
                expected: grid.dims(),
                got: obs.dim(),
            });
        }
        let (p, n) = (grid.len(), obs.len());
        let atoms = grid.points();
        let d = grid.dims();
        let mut cost = vec![0.0; p * n];
        for (i, x) in atoms.chunks_exact(d).enumerate() {
            for (j, y) in obs.iter().enumerate() {
                cost[i * n + j] = cost_unchecked(kind, x, y);
            }
        }
        let mut cost_t = vec![0.0; p * n];
        for i in 0..p {
            for j in 0..n {
                cost_t[j * p + i] = cost[i * n + j];
            }
        }
        let mut solver = Self {
            p,
            n,
            epsilon,
            cost,
            cost_t,
            f: vec![0.0; p],
            g: vec![0.0; n],
            f_next: vec![0.0; p],
            scratch: vec![0.0; p.max(n)],
            iterations: 0,
            history: Vec::new(),
        };
        solver.update_g();
        Ok(solver)
    }

    /// `out_i = −ε log((1/m) Σ_k exp((pot_k − C_ik)/ε))` for row-major `c`.
    fn soft_min(c: &[f64], pot: &[f64], eps: f64, out: &mut [f64], scratch: &mut [f64]) {
        let m = pot.len();
        let inv_eps = 1.0 / eps;
        let a = &mut scratch[..m];
        for (o, row) in out.iter_mut().zip(c.chunks_exact(m)) {
            for ((ak, &pk), &ck) in a.iter_mut().zip(pot).zip(row) {
                *ak = (pk - ck) * inv_eps;
            }
            *o = -eps * normalize_exponents(a);
        }
    }

    fn update_g(&mut self) {
        Self::soft_min(&self.cost_t, &self.f, self.epsilon, &mut self.g, &mut self.scratch);
    }

    /// Computes the next `f` and returns the row-marginal error of the current
    /// pair: row `i` carries mass `a_i exp((f_i − f'_i)/ε)`.
    fn pending_error(&mut self) -> f64 {
        Self::soft_min(&self.cost, &self.g, self.epsilon, &mut self.f_next, &mut self.scratch);
        let a = 1.0 / self.p as f64;
        self.f
            .iter()
            .zip(&self.f_next)
            .map(|(f, fn_)| (a * (((f - fn_) / self.epsilon).exp() - 1.0)).abs())
            .fold(0.0, f64::max)
    }

    /// Performs up to `max_iters` iterations, stopping once the error drops
    /// below `tol`. Returns whether it converged.
    pub fn iterate(&mut self, max_iters: usize, tol: f64) -> bool {
        for _ in 0..max_iters {
            let err = self.pending_error();
            if err < tol {
                self.history.push(err);
                return true;
            }
            std::mem::swap(&mut self.f, &mut self.f_next);
            self.update_g();
            self.iterations += 1;
            self.history.push(err);
        }
        false
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn marginal_error(&mut self) -> f64 {
        self.pending_error()
    }

    /// Coupling `π_ij = exp((f_i + g_j − C_ij)/ε) / (p n)`, row-major.
    pub fn plan(&self) -> Vec<f64> {
        let scale = 1.0 / (self.p * self.n) as f64;
        let mut out = vec![0.0; self.p * self.n];
        for i in 0..self.p {
            for j in 0..self.n {
                let k = i * self.n + j;
                out[k] = scale * ((self.f[i] + self.g[j] - self.cost[k]) / self.epsilon).exp();
            }
        }
        out
    }

    pub fn result(&mut self, converged: bool) -> SinkhornResult {
        SinkhornResult {
            marginal_error: self.pending_error(),
            f: self.f.clone(),
            g: self.g.clone(),
            epsilon: self.epsilon,
            iterations: self.iterations,
            converged,
            error_history: self.history.clone(),
        }
    }
}

/// Runs Sinkhorn to tolerance `tol` on the row marginal; non-convergence is
/// reported through `converged`, not as an error.
pub fn sinkhorn(
    grid: &GridSpec,
    obs: &ObservationSet,
    kind: CostKind,
    epsilon: f64,
    tol: f64,
    max_iters: usize,
) -> Result<SinkhornResult> {
    if !(tol > 0.0) {
        return Err(invalid("tol", format!("must be positive, got {tol}")));
    }
    let mut solver = SinkhornSolver::new(grid, obs, kind, epsilon)?;
    let converged = solver.iterate(max_iters, tol);
    Ok(solver.result(converged))
}
