//! Ground costs between reference points `x` and target points `y`.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldValues, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CostKind {
    /// `½‖x − y‖²`.
    #[serde(rename = "quadratic")]
    StandardQuadratic,
    /// `½ d_T(x, y)` with `d_T` the flat-torus distance (not squared).
    #[serde(rename = "torus")]
    TorusQuadratic,
    /// `½ d_T(x, y)²`, the squared torus variant.
    #[serde(rename = "torus_squared")]
    TorusSquared,
    /// `x = (r, ψ)` in polar coordinates on `[0,1]²`, compared with a Cartesian
    /// `y` through `½‖(r cos 2πψ, r sin 2πψ) − y‖²`.
    #[serde(rename = "polar")]
    PolarQuadratic,
}

impl CostKind {
    pub fn name(self) -> &'static str {
        match self {
            CostKind::StandardQuadratic => "quadratic",
            CostKind::TorusQuadratic => "torus",
            CostKind::TorusSquared => "torus_squared",
            CostKind::PolarQuadratic => "polar",
        }
    }

    pub fn is_polar(self) -> bool {
        self == CostKind::PolarQuadratic
    }

    /// Checks that the kind can be used on a reference domain of dimension `d`.
    pub fn check_dims(self, d: usize) -> Result<()> {
        if self.is_polar() && d != 2 {
            return Err(Error::InvalidCost {
                kind: self.name(),
                reason: format!("polar coordinates need d = 2, got d = {d}"),
            });
        }
        Ok(())
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(CostKind::StandardQuadratic),
            "torus" => Ok(CostKind::TorusQuadratic),
            "torus_squared" => Ok(CostKind::TorusSquared),
            "polar" => Ok(CostKind::PolarQuadratic),
            other => Err(Error::InvalidCost {
                kind: "unknown",
                reason: format!("`{other}` is not one of quadratic, torus, torus_squared, polar"),
            }),
        }
    }
}

/// Cartesian image `(r cos 2πψ, r sin 2πψ)` of a polar point.
#[inline]
pub fn polar_to_cartesian(r: f64, psi: f64) -> [f64; 2] {
    let angle = TAU * psi;
    [r * angle.cos(), r * angle.sin()]
}

/// Polar coordinates `(r, ψ)` with `ψ ∈ [0, 1)` of a Cartesian point.
pub fn cartesian_to_polar(x: &[f64]) -> (f64, f64) {
    let r = x[0].hypot(x[1]);
    let psi = (x[1].atan2(x[0]) / TAU).rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative angles
    (r, if psi >= 1.0 { 0.0 } else { psi })
}

#[inline]
pub(crate) fn half_sq_dist(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, b) in x.iter().zip(y) {
        let t = a - b;
        s += t * t;
    }
    0.5 * s
}

#[inline]
fn torus_sq_dist(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, b) in x.iter().zip(y) {
        let t = a - b;
        // reduce to [-½, ½): the minimum over integer shifts
        let t = t - (t + 0.5).floor();
        s += t * t;
    }
    s
}

/// Evaluates `kind` without dimension checks.
#[inline]
pub(crate) fn cost_unchecked(kind: CostKind, x: &[f64], y: &[f64]) -> f64 {
    match kind {
        CostKind::StandardQuadratic => half_sq_dist(x, y),
        CostKind::TorusQuadratic => 0.5 * torus_sq_dist(x, y).sqrt(),
        CostKind::TorusSquared => 0.5 * torus_sq_dist(x, y),
        CostKind::PolarQuadratic => half_sq_dist(&polar_to_cartesian(x[0], x[1]), y),
    }
}

pub fn cost(kind: CostKind, x: &[f64], y: &[f64]) -> Result<f64> {
    kind.check_dims(x.len())?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(cost_unchecked(kind, x, y))
}

/// Cost evaluation against a fixed set of reference points, usually a grid.
///
/// Polar grids store their Cartesian images so that each evaluation is a
/// plain squared distance, bit-identical to [`cost`].
#[derive(Debug, Clone)]
pub struct CostEvaluator {
    kind: CostKind,
    dim: usize,
    points: Vec<f64>,
}

impl CostEvaluator {
    pub fn for_grid(kind: CostKind, grid: &GridSpec) -> Result<Self> {
        kind.check_dims(grid.dims())?;
        let dim = grid.dims();
        let mut points = grid.points();
        if kind.is_polar() {
            for pt in points.chunks_exact_mut(2) {
                let [a, b] = polar_to_cartesian(pt[0], pt[1]);
                pt[0] = a;
                pt[1] = b;
            }
        }
        Ok(Self { kind, dim, points })
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn check_target(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: y.len(),
            });
        }
        Ok(())
    }

    /// `out[i] = c(x_i, y)`.
    pub fn fill(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        let pts = self.points.chunks_exact(self.dim);
        match self.kind {
            CostKind::StandardQuadratic | CostKind::PolarQuadratic => {
                for (o, x) in out.iter_mut().zip(pts) {
                    *o = half_sq_dist(x, y);
                }
            }
            CostKind::TorusQuadratic => {
                for (o, x) in out.iter_mut().zip(pts) {
                    *o = 0.5 * torus_sq_dist(x, y).sqrt();
                }
            }
            CostKind::TorusSquared => {
                for (o, x) in out.iter_mut().zip(pts) {
                    *o = 0.5 * torus_sq_dist(x, y);
                }
            }
        }
    }
}

/// Pointwise cost over every grid point.
pub fn cost_field(kind: CostKind, grid: &GridSpec, y: &[f64]) -> Result<FieldValues> {
    let eval = CostEvaluator::for_grid(kind, grid)?;
    eval.check_target(y)?;
    let mut out = vec![0.0; grid.len()];
    eval.fill(y, &mut out);
    FieldValues::new(grid.clone(), out)
}
