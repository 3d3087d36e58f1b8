//! Observation sets and the reference/target distributions used by the
//! experiments, with closed-form ground truths where they exist.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// The RNG used everywhere randomness is needed.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent sub-seed for component `stream` of a run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A finite sample `Y_1, …, Y_n` of points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    dim: usize,
    points: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

impl ObservationSet {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if points.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: points.len() % dim,
            });
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i / dim));
        }
        Ok(Self {
            dim,
            points,
            label: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut points = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            points.extend_from_slice(row);
        }
        Self::new(dim, points)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            points: Vec::new(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
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

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.iter() {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Reads one point per row. A header row is detected and skipped when its
    /// first field does not parse as a number.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut dim = None;
        let mut points = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            if row == 0 && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
                continue;
            }
            let values: Vec<f64> = record
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| invalid("csv", format!("row {}: {e}", row + 1)))?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: values.len(),
                    })
                }
                _ => {}
            }
            points.extend(values);
        }
        let dim = dim.ok_or(Error::EmptyObservations)?;
        Self::new(dim, points)
    }

    /// Writes a header `y1,…,yd` followed by one point per row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record((1..=self.dim).map(|k| format!("y{k}")))?;
        for p in self.iter() {
            w.write_record(p.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A distribution that can be sampled one point at a time.
pub trait Sampler: Send + Sync {
    fn dim(&self) -> usize;

    fn sample_into(&self, rng: &mut SeededRng, out: &mut [f64]);

    fn sample(&self, n: usize, seed: u64) -> ObservationSet {
        let mut rng = seeded_rng(seed);
        let d = self.dim();
        let mut points = vec![0.0; n * d];
        for chunk in points.chunks_exact_mut(d) {
            self.sample_into(&mut rng, chunk);
        }
        ObservationSet::new(d, points).expect("samplers produce finite points")
    }
}

/// Uniform distribution on `[0, 1)^d`.
#[derive(Debug, Clone, Copy)]
pub struct UniformCube {
    pub dim: usize,
}

impl Sampler for UniformCube {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_into(&self, rng: &mut SeededRng, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = rng.random::<f64>();
        }
    }
}

/// `X = RΦ` with `R ~ U[0, 1]` and `Φ` uniform on the unit sphere.
#[derive(Debug, Clone, Copy)]
pub struct SphericalUniform {
    pub dim: usize,
}

impl Sampler for SphericalUniform {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_into(&self, rng: &mut SeededRng, out: &mut [f64]) {
        let r: f64 = rng.random();
        loop {
            let mut sq = 0.0;
            for v in out.iter_mut() {
                *v = StandardNormal.sample(rng);
                sq += *v * *v;
            }
            if sq > 0.0 {
                let scale = r / sq.sqrt();
                out.iter_mut().for_each(|v| *v *= scale);
                return;
            }
        }
    }
}

/// Affine constants mapping the banana support box onto `[-0.6,0.6]×[-0.4,0.5]`.
///
/// The unscaled support is `[-1.2, 1.2] × [-0.1025, 1.2]`: the lower bound of the
/// second coordinate is `min_t t² − 0.1(1 + t)` at `t = 0.05`.
pub const BANANA_SUPPORT: [[f64; 2]; 2] = [[-1.2, 1.2], [-0.1025, 1.2]];
pub const BANANA_BOX: [[f64; 2]; 2] = [[-0.6, 0.6], [-0.4, 0.5]];

/// Banana-shaped target: `Y = (U + R cos 2πΦ, U² + R sin 2πΦ)` with
/// `R = 0.2 Z (1 − (1 − |U|)/2)`, `U ~ U[-1,1]` and `Φ, Z ~ U[0,1]`.
#[derive(Debug, Clone, Copy)]
pub struct Banana {
    pub centered_scaled: bool,
}

impl Banana {
    pub fn radius(u: f64, z: f64) -> f64 {
        0.2 * z * (1.0 - (1.0 - u.abs()) / 2.0)
    }

    fn rescale(y: &mut [f64]) {
        for k in 0..2 {
            let [lo, hi] = BANANA_SUPPORT[k];
            let [blo, bhi] = BANANA_BOX[k];
            y[k] = blo + (y[k] - lo) * ((bhi - blo) / (hi - lo));
        }
    }
}

impl Sampler for Banana {
    fn dim(&self) -> usize {
        2
    }

    fn sample_into(&self, rng: &mut SeededRng, out: &mut [f64]) {
        let u: f64 = rng.random_range(-1.0..1.0);
        let phi: f64 = rng.random();
        let z: f64 = rng.random();
        let r = Self::radius(u, z);
        out[0] = u + r * (TAU * phi).cos();
        out[1] = u * u + r * (TAU * phi).sin();
        if self.centered_scaled {
            Self::rescale(out);
        }
    }
}

pub fn sample_uniform_cube(d: usize, n: usize, seed: u64) -> ObservationSet {
    UniformCube { dim: d }.sample(n, seed).with_label("uniform_cube")
}

pub fn sample_spherical_uniform(d: usize, n: usize, seed: u64) -> ObservationSet {
    SphericalUniform { dim: d }.sample(n, seed).with_label("spherical_uniform")
}

pub fn sample_banana(n: usize, seed: u64, centered_scaled: bool) -> ObservationSet {
    Banana { centered_scaled }.sample(n, seed).with_label("banana")
}

/// Beta(a, b) on `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct BetaTarget {
    a: f64,
    b: f64,
    dist: Beta<f64>,
}

impl BetaTarget {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        check_beta_params(a, b)?;
        let dist = Beta::new(a, b).map_err(|e| invalid("beta", e.to_string()))?;
        Ok(Self { a, b, dist })
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        beta_quantile(self.a, self.b, u)
    }
}

impl Sampler for BetaTarget {
    fn dim(&self) -> usize {
        1
    }

    fn sample_into(&self, rng: &mut SeededRng, out: &mut [f64]) {
        out[0] = self.dist.sample(rng);
    }
}

fn check_beta_params(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(invalid("a", format!("must be positive, got {a}")));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(invalid("b", format!("must be positive, got {b}")));
    }
    Ok(())
}

pub fn sample_beta(a: f64, b: f64, n: usize, seed: u64) -> Result<ObservationSet> {
    Ok(BetaTarget::new(a, b)?.sample(n, seed).with_label("beta"))
}

/// Inverse of the regularized incomplete beta function, by bisection.
pub fn beta_quantile(a: f64, b: f64, u: f64) -> Result<f64> {
    check_beta_params(a, b)?;
    if !(0.0..=1.0).contains(&u) {
        return Err(invalid("u", format!("must lie in [0, 1], got {u}")));
    }
    if u == 0.0 || u == 1.0 {
        return Ok(u);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if statrs::function::beta::beta_reg(a, b, mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Linear push-forward `Q(x) = LᵀL x + b` of the uniform cube, with `L`
/// lower triangular and `b` both filled with ones.
#[derive(Debug, Clone)]
pub struct LinearMapTarget {
    dim: usize,
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl LinearMapTarget {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        // (LᵀL)_ij = #{k : k >= max(i, j)} for an all-ones lower-triangular L
        let matrix = (0..dim * dim)
            .map(|ij| (dim - (ij / dim).max(ij % dim)) as f64)
            .collect();
        Ok(Self {
            dim,
            matrix,
            offset: vec![1.0; dim],
        })
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                self.offset[i]
                    + (0..self.dim)
                        .map(|j| self.matrix[i * self.dim + j] * x[j])
                        .sum::<f64>()
            })
            .collect()
    }
}

impl Sampler for LinearMapTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_into(&self, rng: &mut SeededRng, out: &mut [f64]) {
        let x: Vec<f64> = (0..self.dim).map(|_| rng.random::<f64>()).collect();
        out.copy_from_slice(&self.apply(&x));
    }
}

/// Uniform resampling from a fixed observation set.
#[derive(Debug, Clone)]
pub struct Empirical {
    obs: ObservationSet,
}

impl Empirical {
    pub fn new(obs: ObservationSet) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::EmptyObservations);
        }
        Ok(Self { obs })
    }
}

impl Sampler for Empirical {
    fn dim(&self) -> usize {
        self.obs.dim()
    }

    fn sample_into(&self, rng: &mut SeededRng, out: &mut [f64]) {
        let j = rng.random_range(0..self.obs.len());
        out.copy_from_slice(self.obs.point(j));
    }
}
