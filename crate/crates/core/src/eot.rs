//! The entropic semi-dual objective in Fourier coordinates.
//!
//! For a potential `u = Σ θ_λ φ_λ` on the grid and a target point `y`, every
//! quantity here derives from the grid log-mean-exp
//! `L(θ, y) = log mean_x exp((u(x) − c(x, y)) / ε)`:
//!
//! * sample objective `h_ε(θ, y) = ε L + ε`,
//! * smooth c-transform `u^{c,ε}(y) = −ε L`,
//! * Gibbs density `F_{θ,y} = exp((u − c)/ε − L)` (unit grid mean),
//! * gradient `∂h/∂θ_λ = mean(conj(φ_λ) F)`,
//! * Hessian form `D²h[τ, τ] = Var_F(Σ τ_λ φ_λ) / ε`.
//!
//! Grid means replace every integral against the reference measure, and every
//! exponential goes through a max shift.

use num_complex::Complex64;

use crate::costs::{CostEvaluator, CostKind};
use crate::distributions::ObservationSet;
use crate::error::{invalid, Error, Result};
use crate::grid::{CoefficientVector, FieldValues, GridSpec};
use crate::spectral::{SpectralPlan, Workspace};

/// Coefficients `θ` together with the regularization and cost they are
/// evaluated under.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub coeffs: CoefficientVector,
    pub epsilon: f64,
    pub cost_kind: CostKind,
}

impl DualState {
    pub fn new(coeffs: CoefficientVector, epsilon: f64, cost_kind: CostKind) -> Result<Self> {
        check_epsilon(epsilon)?;
        cost_kind.check_dims(coeffs.grid().dims())?;
        Ok(Self {
            coeffs,
            epsilon,
            cost_kind,
        })
    }

    pub fn zero(grid: &GridSpec, epsilon: f64, cost_kind: CostKind) -> Result<Self> {
        Self::new(CoefficientVector::zeros(grid), epsilon, cost_kind)
    }

    pub fn grid(&self) -> &GridSpec {
        self.coeffs.grid()
    }

    /// Synthesizes `u` once so that many target points can be evaluated.
    pub fn evaluator(&self) -> Result<DualEvaluator> {
        let plan = SpectralPlan::new(self.grid());
        let u = plan.inverse(&self.coeffs)?.into_values();
        DualEvaluator::build(plan, u, self.epsilon, self.cost_kind)
    }
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid("epsilon", format!("must be positive and finite, got {epsilon}")));
    }
    Ok(())
}

fn check_point(y: &[f64]) -> Result<()> {
    match y.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// A dual state with its potential already synthesized on the grid.
#[derive(Debug, Clone)]
pub struct DualEvaluator {
    epsilon: f64,
    plan: SpectralPlan,
    cost: CostEvaluator,
    u: Vec<f64>,
}

impl DualEvaluator {
    fn build(plan: SpectralPlan, u: Vec<f64>, epsilon: f64, kind: CostKind) -> Result<Self> {
        check_epsilon(epsilon)?;
        let cost = CostEvaluator::for_grid(kind, plan.grid())?;
        Ok(Self {
            epsilon,
            plan,
            cost,
            u,
        })
    }

    /// Evaluator for an arbitrary potential given by its grid values. Unlike
    /// [`DualState::evaluator`] the potential need not have zero mean.
    pub fn from_potential(potential: &FieldValues, epsilon: f64, kind: CostKind) -> Result<Self> {
        let plan = SpectralPlan::new(potential.grid());
        Self::build(plan, potential.values().to_vec(), epsilon, kind)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn grid(&self) -> &GridSpec {
        self.plan.grid()
    }

    pub fn cost_kind(&self) -> CostKind {
        self.cost.kind()
    }

    pub fn potential(&self) -> &[f64] {
        &self.u
    }

    /// Fills `buf` with `(u − c(·, y))/ε` and returns `(max, mean exp(buf − max))`.
    fn exponents(&self, y: &[f64], buf: &mut Vec<f64>) -> (f64, f64) {
        buf.resize(self.u.len(), 0.0);
        self.cost.fill(y, buf);
        let inv_eps = 1.0 / self.epsilon;
        let mut max = f64::NEG_INFINITY;
        for (b, &u) in buf.iter_mut().zip(&self.u) {
            *b = (u - *b) * inv_eps;
            max = max.max(*b);
        }
        let sum: f64 = buf.iter().map(|&a| (a - max).exp()).sum();
        (max, sum / buf.len() as f64)
    }

    fn checked(&self, y: &[f64]) -> Result<()> {
        self.cost.check_target(y)?;
        check_point(y)
    }

    /// `log mean_x exp((u(x) − c(x, y))/ε)`.
    pub fn log_mean_exp(&self, y: &[f64]) -> Result<f64> {
        self.checked(y)?;
        let (max, mean) = self.exponents(y, &mut Vec::new());
        Ok(max + mean.ln())
    }

    /// Density `F_{θ,y}` with unit grid mean; written into `out`.
    fn density_into(&self, y: &[f64], out: &mut Vec<f64>) {
        out.resize(self.u.len(), 0.0);
        self.cost.fill(y, out);
        let inv_eps = 1.0 / self.epsilon;
        for (b, &u) in out.iter_mut().zip(&self.u) {
            *b = (u - *b) * inv_eps;
        }
        normalize_exponents(out);
    }

    pub fn gibbs_density(&self, y: &[f64]) -> Result<FieldValues> {
        self.checked(y)?;
        let mut out = Vec::new();
        self.density_into(y, &mut out);
        FieldValues::new(self.grid().clone(), out)
    }

    /// `h_ε(θ, y) = ε log mean exp((u − c)/ε) + ε`.
    pub fn sample_objective(&self, y: &[f64]) -> Result<f64> {
        Ok(self.epsilon * self.log_mean_exp(y)? + self.epsilon)
    }

    /// `u^{c,ε}(y) = −ε log mean exp((u − c)/ε)`.
    pub fn smooth_c_transform(&self, y: &[f64]) -> Result<f64> {
        Ok(-self.epsilon * self.log_mean_exp(y)?)
    }

    /// Fourier coefficients of `F_{θ,y}` with the zero frequency pinned.
    pub fn stochastic_gradient(&self, y: &[f64]) -> Result<CoefficientVector> {
        self.checked(y)?;
        let mut f = Vec::new();
        self.density_into(y, &mut f);
        let mut out = vec![Complex64::new(0.0, 0.0); f.len()];
        self.plan.forward_into(&f, &mut out, &mut Workspace::default());
        Ok(CoefficientVector::from_raw(self.grid().frequencies(), out))
    }

    fn synthesize(&self, tau: &CoefficientVector) -> Result<Vec<f64>> {
        if tau.grid() != self.grid() {
            return Err(Error::DimensionMismatch {
                expected: self.grid().len(),
                got: tau.len(),
            });
        }
        Ok(self.plan.inverse(tau)?.into_values())
    }

    /// `Dh(θ, y)[τ] = mean_F(S)` with `S = Σ τ_λ φ_λ`.
    pub fn directional_derivative(&self, y: &[f64], tau: &CoefficientVector) -> Result<f64> {
        self.checked(y)?;
        let s = self.synthesize(tau)?;
        let mut f = Vec::new();
        self.density_into(y, &mut f);
        Ok(weighted_mean(&f, &s))
    }

    /// `D²h(θ, y)[τ, τ] = (mean_F(S²) − mean_F(S)²)/ε`, computed as a centered
    /// second moment so it is never negative.
    pub fn hessian_quadratic_form(&self, y: &[f64], tau: &CoefficientVector) -> Result<f64> {
        self.checked(y)?;
        let s = self.synthesize(tau)?;
        let mut f = Vec::new();
        self.density_into(y, &mut f);
        Ok(weighted_variance(&f, &s) / self.epsilon)
    }

    /// Grid mean of `F²_{θ,y}`.
    pub fn density_second_moment(&self, y: &[f64]) -> Result<f64> {
        self.checked(y)?;
        let mut f = Vec::new();
        self.density_into(y, &mut f);
        Ok(f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64)
    }

    /// `(2 − avg_j mean(F²_{θ,Y_j}))/ε`; a positive value certifies the
    /// sufficient condition for a uniform lower bound on the Hessian at `θ`.
    pub fn convexity_certificate(&self, sample: &ObservationSet) -> Result<f64> {
        if sample.is_empty() {
            return Err(Error::EmptyObservations);
        }
        let mut total = 0.0;
        for y in sample.iter() {
            total += self.density_second_moment(y)?;
        }
        Ok(convexity_bound(self.epsilon, total / sample.len() as f64))
    }
}

/// Turns exponents `a` into `exp(a)/mean(exp(a))` in place, through a max
/// shift. Returns `log mean exp(a)`.
pub(crate) fn normalize_exponents(a: &mut [f64]) -> f64 {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in a.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let mean = sum / a.len() as f64;
    let inv = 1.0 / mean;
    a.iter_mut().for_each(|v| *v *= inv);
    max + mean.ln()
}

/// `mean(f · s)`.
pub(crate) fn weighted_mean(f: &[f64], s: &[f64]) -> f64 {
    f.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() / f.len() as f64
}

/// `mean(f · (s − mean(f·s))²)` for a density `f` with unit mean.
pub(crate) fn weighted_variance(f: &[f64], s: &[f64]) -> f64 {
    let m = weighted_mean(f, s);
    f.iter()
        .zip(s)
        .map(|(a, b)| a * (b - m) * (b - m))
        .sum::<f64>()
        / f.len() as f64
}

/// Hessian lower-bound constant `(2 − ∫∫F²)/ε` from a second moment of `F`.
pub fn convexity_bound(epsilon: f64, mean_sq_density: f64) -> f64 {
    (2.0 - mean_sq_density) / epsilon
}

/// `g(x) = (1 − e^{−x})/x`, with `g(0) = 1`.
pub fn self_concordance_modulus(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x / 2.0
    } else {
        -(-x).exp_m1() / x
    }
}

pub fn gibbs_density(state: &DualState, y: &[f64]) -> Result<FieldValues> {
    state.evaluator()?.gibbs_density(y)
}

pub fn sample_objective(state: &DualState, y: &[f64]) -> Result<f64> {
    state.evaluator()?.sample_objective(y)
}

pub fn stochastic_gradient(state: &DualState, y: &[f64]) -> Result<CoefficientVector> {
    state.evaluator()?.stochastic_gradient(y)
}

pub fn smooth_c_transform(state: &DualState, y: &[f64]) -> Result<f64> {
    state.evaluator()?.smooth_c_transform(y)
}

pub fn hessian_quadratic_form(state: &DualState, y: &[f64], tau: &CoefficientVector) -> Result<f64> {
    state.evaluator()?.hessian_quadratic_form(y, tau)
}

pub fn convexity_certificate(state: &DualState, sample: &ObservationSet) -> Result<f64> {
    state.evaluator()?.convexity_certificate(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::cost;

    fn grid1(p: usize) -> GridSpec {
        GridSpec::new(vec![p]).unwrap()
    }

    #[test]
    fn zero_cost_gives_uniform_density() {
        let g = grid1(16);
        // θ = 0 with a zero cost: all exponents vanish
        let mut f = vec![0.0; g.len()];
        let lme = normalize_exponents(&mut f);
        assert_eq!(lme, 0.0);
        assert!(f.iter().all(|&v| v == 1.0));
        // the polar r = 0 row has a constant cost, hence a uniform density
        let pg = GridSpec::new(vec![4, 8]).unwrap();
        let pol = DualState::zero(&pg, 0.2, CostKind::PolarQuadratic).unwrap();
        let dens = pol.evaluator().unwrap().gibbs_density(&[0.3, 0.1]).unwrap();
        let row0 = &dens.values()[..8];
        assert!(row0.iter().all(|v| (v - row0[0]).abs() < 1e-14));
    }

    #[test]
    fn density_matches_direct_evaluation() {
        let g = grid1(64);
        let state = DualState::zero(&g, 0.5, CostKind::StandardQuadratic).unwrap();
        let f = gibbs_density(&state, &[0.5]).unwrap();
        let raw: Vec<f64> = (0..64)
            .map(|i| (-cost(CostKind::StandardQuadratic, &[i as f64 / 64.0], &[0.5]).unwrap() / 0.5).exp())
            .collect();
        let z = raw.iter().sum::<f64>() / 64.0;
        for (a, b) in f.values().iter().zip(&raw) {
            assert!((a - b / z).abs() < 1e-12);
        }
        assert!((f.mean() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn huge_epsilon_flattens_density() {
        let g = grid1(32);
        let mut c = CoefficientVector::zeros(&g);
        c.set_pair(&[1], Complex64::new(0.3, 0.1)).unwrap();
        c.set_pair(&[3], Complex64::new(-0.1, 0.05)).unwrap();
        let state = DualState::new(c, 1e6, CostKind::StandardQuadratic).unwrap();
        let f = gibbs_density(&state, &[0.2]).unwrap();
        assert!(f.values().iter().all(|v| (v - 1.0).abs() < 1e-5));
        let grad = stochastic_gradient(&state, &[0.2]).unwrap();
        assert!(grad.sup_norm() < 1e-5);
        let cert = convexity_certificate(&state, &ObservationSet::new(1, vec![0.2, 0.7]).unwrap()).unwrap();
        assert!((cert - 1e-6).abs() < 1e-10);
    }

    #[test]
    fn objective_and_transform_share_log_mean_exp() {
        let g = grid1(32);
        let state = DualState::zero(&g, 0.1, CostKind::TorusQuadratic).unwrap();
        let ev = state.evaluator().unwrap();
        for y in [0.0, 0.3, 0.99] {
            let h = ev.sample_objective(&[y]).unwrap();
            let t = ev.smooth_c_transform(&[y]).unwrap();
            assert!((h + t - 0.1).abs() < 1e-12);
            let direct = (0..32)
                .map(|i| (-cost(CostKind::TorusQuadratic, &[i as f64 / 32.0], &[y]).unwrap() / 0.1).exp())
                .sum::<f64>()
                / 32.0;
            assert!((h - (0.1 * direct.ln() + 0.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_shift_moves_objective() {
        let g = grid1(32);
        let u = FieldValues::from_fn(g.clone(), |x| (6.0 * x[0]).sin() * 0.2).unwrap();
        let shifted = FieldValues::new(g, u.values().iter().map(|v| v + 0.75).collect()).unwrap();
        let a = DualEvaluator::from_potential(&u, 0.2, CostKind::StandardQuadratic).unwrap();
        let b = DualEvaluator::from_potential(&shifted, 0.2, CostKind::StandardQuadratic).unwrap();
        let ha = a.sample_objective(&[0.4]).unwrap();
        let hb = b.sample_objective(&[0.4]).unwrap();
        assert!((hb - ha - 0.75).abs() < 1e-12);
    }

    #[test]
    fn laplace_limit_of_transform() {
        let g = grid1(512);
        let state = DualState::zero(&g, 0.001, CostKind::StandardQuadratic).unwrap();
        let t = smooth_c_transform(&state, &[0.5]).unwrap();
        // exact infimum over the grid is 0 (x = 0.5 is a grid node)
        assert!(t.abs() < 5e-3, "{t}");
    }

    #[test]
    fn symmetric_density_has_real_even_gradient() {
        let g = grid1(64);
        let state = DualState::zero(&g, 0.5, CostKind::StandardQuadratic).unwrap();
        let grad = stochastic_gradient(&state, &[0.5]).unwrap();
        for l in 1..32 {
            let a = grad.get(&[l]).unwrap();
            let b = grad.get(&[-l]).unwrap();
            assert!(a.im.abs() < 1e-14);
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn hessian_of_zero_direction_vanishes() {
        let g = grid1(16);
        let state = DualState::zero(&g, 0.1, CostKind::StandardQuadratic).unwrap();
        let tau = CoefficientVector::zeros(&g);
        assert_eq!(hessian_quadratic_form(&state, &[0.3], &tau).unwrap(), 0.0);
    }

    #[test]
    fn hessian_flat_limit_is_parseval() {
        let g = grid1(16);
        let state = DualState::zero(&g, 1e6, CostKind::StandardQuadratic).unwrap();
        let mut tau = CoefficientVector::zeros(&g);
        tau.set_pair(&[2], Complex64::new(0.4, -0.3)).unwrap();
        tau.set_pair(&[5], Complex64::new(0.1, 0.2)).unwrap();
        let h = hessian_quadratic_form(&state, &[0.3], &tau).unwrap();
        let l2 = tau.l2_norm().powi(2) / 1e6;
        assert!((h - l2).abs() < 1e-6 * l2, "{h} vs {l2}");
    }

    #[test]
    fn certificate_boundary() {
        // F = 2 on half the grid, 0 elsewhere
        let f = [2.0, 2.0, 0.0, 0.0];
        let msq = f.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert_eq!(convexity_bound(0.1, msq), 0.0);
        let g = grid1(8);
        let state = DualState::zero(&g, 0.1, CostKind::StandardQuadratic).unwrap();
        assert!(matches!(
            convexity_certificate(&state, &ObservationSet::empty(1)),
            Err(Error::EmptyObservations)
        ));
    }

    #[test]
    fn self_concordance_modulus_values() {
        assert_eq!(self_concordance_modulus(0.0), 1.0);
        assert!((self_concordance_modulus(1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((self_concordance_modulus(1e-9) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_inputs() {
        let g = grid1(8);
        assert!(DualState::zero(&g, 0.0, CostKind::StandardQuadratic).is_err());
        assert!(DualState::zero(&g, 0.1, CostKind::PolarQuadratic).is_err());
        let state = DualState::zero(&g, 0.1, CostKind::StandardQuadratic).unwrap();
        assert!(sample_objective(&state, &[f64::NAN]).is_err());
        assert!(sample_objective(&state, &[0.1, 0.2]).is_err());
    }
}
