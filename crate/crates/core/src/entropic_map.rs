//! Regularized quantile maps built from a dual state and the observations.
//!
//! With conjugate values `g_j = u^{c,ε}(Y_j)`, the map is the barycentric
//! projection
//!
//! ```text
//! Q̂(x) = Σ_j F̂_j(x) Y_j,   F̂_j(x) ∝ exp((g_j − c(x, Y_j)) / ε)
//! ```
//!
//! For polar estimators the query is the Cartesian point of the unit ball and
//! `c` is the plain quadratic cost.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{cartesian_to_polar, cost_unchecked, polar_to_cartesian, CostKind};
use crate::distributions::ObservationSet;
use crate::eot::{check_epsilon, normalize_exponents, DualState};
use crate::error::{invalid, Error, Result};
use crate::grid::{CoefficientVector, GridSpec};
use crate::spectral::SpectralPlan;

/// Softmax weights `∝ exp((conj_j − c(x, Y_j))/ε)` written into `out`.
pub fn barycentric_weights(
    kind: CostKind,
    epsilon: f64,
    conjugates: &[f64],
    obs: &ObservationSet,
    x: &[f64],
    out: &mut [f64],
) {
    let inv_eps = 1.0 / epsilon;
    for ((w, &g), y) in out.iter_mut().zip(conjugates).zip(obs.iter()) {
        *w = (g - cost_unchecked(kind, x, y)) * inv_eps;
    }
    normalize_exponents(out);
    let n = out.len() as f64;
    for w in out.iter_mut() {
        *w /= n;
    }
}

/// `Σ_j F_j(x) Y_j` for the weights of [`barycentric_weights`].
pub fn barycentric_projection(
    kind: CostKind,
    epsilon: f64,
    conjugates: &[f64],
    obs: &ObservationSet,
    x: &[f64],
) -> Vec<f64> {
    let mut w = vec![0.0; obs.len()];
    barycentric_weights(kind, epsilon, conjugates, obs, x, &mut w);
    let mut out = vec![0.0; obs.dim()];
    for (wj, y) in w.iter().zip(obs.iter()) {
        for (o, yi) in out.iter_mut().zip(y) {
            *o += wj * yi;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropicMapEstimator {
    coeffs: CoefficientVector,
    epsilon: f64,
    cost_kind: CostKind,
    observations: ObservationSet,
    conjugates: Vec<f64>,
    #[serde(skip)]
    potential: OnceLock<Vec<f64>>,
}

/// Computes `u^{c,ε}(Y_j)` for every observation, in parallel.
pub fn build_estimator(state: &DualState, obs: &ObservationSet) -> Result<EntropicMapEstimator> {
    if obs.is_empty() {
        return Err(Error::EmptyObservations);
    }
    let eval = state.evaluator()?;
    let conjugates = obs
        .as_flat()
        .par_chunks_exact(obs.dim())
        .map(|y| eval.smooth_c_transform(y))
        .collect::<Result<Vec<f64>>>()?;
    Ok(EntropicMapEstimator {
        coeffs: state.coeffs.clone(),
        epsilon: state.epsilon,
        cost_kind: state.cost_kind,
        observations: obs.clone(),
        conjugates,
        potential: OnceLock::new(),
    })
}

impl EntropicMapEstimator {
    /// Estimator from externally computed conjugate values (e.g. Sinkhorn's `g`).
    pub fn from_conjugates(
        coeffs: CoefficientVector,
        epsilon: f64,
        cost_kind: CostKind,
        observations: ObservationSet,
        conjugates: Vec<f64>,
    ) -> Result<Self> {
        let est = Self {
            coeffs,
            epsilon,
            cost_kind,
            observations,
            conjugates,
            potential: OnceLock::new(),
        };
        est.validate()?;
        Ok(est)
    }

    fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        self.cost_kind.check_dims(self.coeffs.grid().dims())?;
        if self.observations.is_empty() {
            return Err(Error::EmptyObservations);
        }
        if self.conjugates.len() != self.observations.len() {
            return Err(Error::DimensionMismatch {
                expected: self.observations.len(),
                got: self.conjugates.len(),
            });
        }
        if let Some(i) = self.conjugates.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if self.observations.dim() != self.target_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.target_dim(),
                got: self.observations.dim(),
            });
        }
        Ok(())
    }

    fn target_dim(&self) -> usize {
        self.coeffs.grid().dims()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn grid(&self) -> &GridSpec {
        self.coeffs.grid()
    }

    pub fn cost_kind(&self) -> CostKind {
        self.cost_kind
    }

    pub fn coeffs(&self) -> &CoefficientVector {
        &self.coeffs
    }

    pub fn observations(&self) -> &ObservationSet {
        &self.observations
    }

    pub fn conjugates(&self) -> &[f64] {
        &self.conjugates
    }

    pub fn is_polar(&self) -> bool {
        self.cost_kind.is_polar()
    }

    /// Cost used between a query point and the observations.
    fn map_cost(&self) -> CostKind {
        if self.is_polar() {
            CostKind::StandardQuadratic
        } else {
            self.cost_kind
        }
    }

    fn check_query(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.observations.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.observations.dim(),
                got: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(())
    }

    pub fn weights_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_query(x)?;
        let mut w = vec![0.0; self.observations.len()];
        barycentric_weights(
            self.map_cost(),
            self.epsilon,
            &self.conjugates,
            &self.observations,
            x,
            &mut w,
        );
        Ok(w)
    }

    pub fn evaluate_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_query(x)?;
        Ok(barycentric_projection(
            self.map_cost(),
            self.epsilon,
            &self.conjugates,
            &self.observations,
            x,
        ))
    }

    /// Evaluates at every row of `xs` in parallel.
    pub fn evaluate_many(&self, xs: &ObservationSet) -> Result<ObservationSet> {
        let rows = xs
            .as_flat()
            .par_chunks_exact(xs.dim())
            .map(|x| self.evaluate_map(x))
            .collect::<Result<Vec<_>>>()?;
        let label = xs.label().map(|l| format!("{l} mapped"));
        let out = ObservationSet::from_rows(self.observations.dim(), &rows)?;
        Ok(match label {
            Some(l) => out.with_label(l),
            None => out,
        })
    }

    /// Polar map `Q̄(r, ψ)`.
    pub fn evaluate_polar(&self, r: f64, psi: f64) -> Result<Vec<f64>> {
        if !self.is_polar() {
            return Err(Error::InvalidCost {
                kind: self.cost_kind.name(),
                reason: "polar evaluation needs a polar estimator".into(),
            });
        }
        self.evaluate_map(&polar_to_cartesian(r, psi))
    }

    /// `−ε log((1/n) Σ_j exp((g_j − c(x, Y_j))/ε))`, whose gradient is `x − Q̂(x)`
    /// under the quadratic cost.
    pub fn double_conjugate(&self, x: &[f64]) -> Result<f64> {
        self.check_query(x)?;
        let kind = self.map_cost();
        let inv_eps = 1.0 / self.epsilon;
        let mut a: Vec<f64> = self
            .conjugates
            .iter()
            .zip(self.observations.iter())
            .map(|(&g, y)| (g - cost_unchecked(kind, x, y)) * inv_eps)
            .collect();
        Ok(-self.epsilon * normalize_exponents(&mut a))
    }

    /// Potential `ū` at a Cartesian point of the unit ball, interpolated
    /// bilinearly on the polar grid with angular wrap-around. Radii past the
    /// last grid row use that row.
    pub fn cartesian_potential(&self, x: &[f64]) -> Result<f64> {
        if !self.is_polar() {
            return Err(Error::InvalidCost {
                kind: self.cost_kind.name(),
                reason: "cartesian_potential needs a polar estimator".into(),
            });
        }
        self.check_query(x)?;
        let (r, psi) = cartesian_to_polar(x);
        if r > 1.0 + 1e-12 {
            return Err(Error::OutOfDomain(format!("radius {r} exceeds 1")));
        }
        let u = self.potential_values()?;
        Ok(interpolate_polar(self.grid(), u, r, psi))
    }

    /// The potential `u` synthesized on the grid (cached).
    pub fn potential_values(&self) -> Result<&[f64]> {
        if let Some(u) = self.potential.get() {
            return Ok(u);
        }
        let field = SpectralPlan::new(self.grid()).inverse(&self.coeffs)?;
        Ok(self.potential.get_or_init(|| field.into_values()))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let est: Self = serde_json::from_reader(file)?;
        est.validate()?;
        Ok(est)
    }
}

/// Bilinear interpolation of grid values on a `(radius, angle)` grid.
pub(crate) fn interpolate_polar(grid: &GridSpec, u: &[f64], r: f64, psi: f64) -> f64 {
    let (p1, p2) = (grid.sizes()[0], grid.sizes()[1]);
    let fr = r * p1 as f64;
    let (i0, t) = if fr >= (p1 - 1) as f64 {
        (p1 - 1, 0.0)
    } else {
        let i = fr.floor() as usize;
        (i, fr - i as f64)
    };
    let i1 = (i0 + 1).min(p1 - 1);
    let fa = psi.rem_euclid(1.0) * p2 as f64;
    let k0 = (fa.floor() as usize) % p2;
    let s = fa - fa.floor();
    let k1 = (k0 + 1) % p2;
    let at = |i: usize, k: usize| u[i * p2 + k];
    (1.0 - t) * ((1.0 - s) * at(i0, k0) + s * at(i0, k1)) + t * ((1.0 - s) * at(i1, k0) + s * at(i1, k1))
}

/// Images of the radius-`r` circle under the polar map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileContour {
    pub level: f64,
    pub points: Vec<[f64; 2]>,
}

impl QuantileContour {
    pub fn n_angles(&self) -> usize {
        self.points.len()
    }

    /// CSV with columns `level,angle_index,x,y`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_contours_csv(std::slice::from_ref(self), out)
    }
}

pub fn write_contours_csv<W: Write>(contours: &[QuantileContour], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "angle_index", "x", "y"])?;
    for c in contours {
        for (k, p) in c.points.iter().enumerate() {
            w.write_record([
                format!("{}", c.level),
                k.to_string(),
                format!("{:e}", p[0]),
                format!("{:e}", p[1]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Evaluates `Q̄(r, k/n_angles)` for `k = 0..n_angles`.
pub fn quantile_contour(
    est: &EntropicMapEstimator,
    level: f64,
    n_angles: usize,
) -> Result<QuantileContour> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(invalid("level", format!("must lie in (0, 1], got {level}")));
    }
    if n_angles == 0 {
        return Err(invalid("n_angles", "must be at least 1"));
    }
    let points = (0..n_angles)
        .into_par_iter()
        .map(|k| {
            let q = est.evaluate_polar(level, k as f64 / n_angles as f64)?;
            Ok([q[0], q[1]])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantileContour { level, points })
}

/// Mean distance from each point of `a` to the closed polyline through `b`.
pub fn mean_distance_to_polyline(a: &QuantileContour, b: &QuantileContour) -> f64 {
    let m = b.points.len();
    let dist = |p: &[f64; 2]| {
        (0..m)
            .map(|k| segment_distance(p, &b.points[k], &b.points[(k + 1) % m]))
            .fold(f64::INFINITY, f64::min)
    };
    a.points.iter().map(dist).sum::<f64>() / a.points.len() as f64
}

fn segment_distance(p: &[f64; 2], a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn obs1(v: &[f64]) -> ObservationSet {
        ObservationSet::new(1, v.to_vec()).unwrap()
    }

    #[test]
    fn weights_are_on_the_simplex() {
        let y = obs1(&[0.1, 0.5, 0.9, 0.3]);
        let mut w = vec![0.0; 4];
        barycentric_weights(CostKind::StandardQuadratic, 0.01, &[0.0, 0.2, -0.1, 0.05], &y, &[0.4], &mut w);
        assert!(w.iter().all(|&v| v >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_observation_is_fixed_point() {
        let g = GridSpec::new(vec![16]).unwrap();
        let st = DualState::zero(&g, 0.1, CostKind::StandardQuadratic).unwrap();
        let est = build_estimator(&st, &obs1(&[0.7])).unwrap();
        for x in [0.0, 0.3, 0.99] {
            assert_eq!(est.evaluate_map(&[x]).unwrap(), vec![0.7]);
        }
    }

    #[test]
    fn duplicates_share_conjugates() {
        let g = GridSpec::new(vec![16]).unwrap();
        let st = DualState::zero(&g, 0.1, CostKind::StandardQuadratic).unwrap();
        let est = build_estimator(&st, &obs1(&[0.2, 0.6, 0.2])).unwrap();
        assert_eq!(est.conjugates()[0], est.conjugates()[2]);
    }

    #[test]
    fn empty_observations_rejected() {
        let g = GridSpec::new(vec![16]).unwrap();
        let st = DualState::zero(&g, 0.1, CostKind::StandardQuadratic).unwrap();
        assert!(matches!(build_estimator(&st, &ObservationSet::empty(1)), Err(Error::EmptyObservations)));
    }

    #[test]
    fn interpolation_hits_nodes() {
        let g = GridSpec::new(vec![4, 8]).unwrap();
        let u: Vec<f64> = (0..32).map(|i| (i as f64 * 0.7).sin()).collect();
        for i in 0..4 {
            for k in 0..8 {
                let v = interpolate_polar(&g, &u, i as f64 / 4.0, k as f64 / 8.0);
                assert!((v - u[i * 8 + k]).abs() < 1e-14);
            }
        }
        // wrap between the last and first angle column
        let v = interpolate_polar(&g, &u, 0.25, 15.0 / 16.0);
        assert!((v - 0.5 * (u[15] + u[8])).abs() < 1e-14);
    }

    #[test]
    fn contour_level_validated() {
        let g = GridSpec::new(vec![4, 8]).unwrap();
        let st = DualState::zero(&g, 0.1, CostKind::PolarQuadratic).unwrap();
        let y = ObservationSet::new(2, vec![0.1, 0.2]).unwrap();
        let est = build_estimator(&st, &y).unwrap();
        assert!(quantile_contour(&est, 0.0, 8).is_err());
        assert!(quantile_contour(&est, 1.5, 8).is_err());
        let c = quantile_contour(&est, 1.0, 8).unwrap();
        assert!(c.points.iter().all(|p| (p[0] - 0.1).abs() < 1e-15 && (p[1] - 0.2).abs() < 1e-15));
    }

    #[test]
    fn cartesian_potential_checks() {
        let g = GridSpec::new(vec![4, 8]).unwrap();
        let mut c = CoefficientVector::zeros(&g);
        c.set_pair(&[1, 0], Complex64::new(0.3, 0.0)).unwrap();
        let st = DualState::new(c, 0.1, CostKind::PolarQuadratic).unwrap();
        let est = build_estimator(&st, &ObservationSet::new(2, vec![0.0, 0.0]).unwrap()).unwrap();
        assert!(est.cartesian_potential(&[1.0, 1.0]).is_err());
        let u = est.potential_values().unwrap().to_vec();
        let v = est.cartesian_potential(&[0.0, 0.0]).unwrap();
        assert!((v - u[0]).abs() < 1e-14);
    }

    #[test]
    fn polyline_distance_of_a_contour_to_itself_is_zero() {
        let c = QuantileContour {
            level: 0.5,
            points: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
        };
        assert_eq!(mean_distance_to_polyline(&c, &c), 0.0);
        let d = QuantileContour {
            level: 0.5,
            points: vec![[0.5, -0.5]],
        };
        assert!((mean_distance_to_polyline(&d, &c) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn contour_csv_layout() {
        let c = QuantileContour {
            level: 0.5,
            points: vec![[0.25, -1.0]],
        };
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "level,angle_index,x,y\n0.5,0,2.5e-1,-1e0\n");
    }
}
