//! Regular grids on the unit hypercube, scalar fields sampled on them and the
//! truncated Fourier coefficient layout that goes with each grid.
//!
//! Grid points sit at left endpoints: index `i` on an axis of size `p` maps to
//! the coordinate `i / p`, so the grid is a discretization of the flat torus
//! `[0, 1)^d` on which the Fourier basis is exactly orthogonal. Flat indices are
//! row-major (the last axis varies fastest).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct GridSpec {
    sizes: Vec<usize>,
}

impl GridSpec {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidGrid("a grid needs at least one axis".into()));
        }
        if let Some(p) = sizes.iter().find(|&&p| p < 2) {
            return Err(Error::InvalidGrid(format!(
                "every axis needs at least 2 points, got {p}"
            )));
        }
        let total = sizes
            .iter()
            .try_fold(1usize, |acc, &p| acc.checked_mul(p))
            .ok_or_else(|| Error::InvalidGrid("total point count overflows".into()))?;
        if total > isize::MAX as usize / 16 {
            return Err(Error::InvalidGrid("grid does not fit in memory".into()));
        }
        Ok(Self { sizes })
    }

    /// `p` points per axis in `d` dimensions.
    pub fn uniform(d: usize, p: usize) -> Result<Self> {
        Self::new(vec![p; d])
    }

    pub fn dims(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims()];
        for (axis, &p) in self.sizes.iter().enumerate().rev() {
            idx[axis] = flat % p;
            flat /= p;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.sizes)
            .fold(0, |acc, (&i, &p)| acc * p + i)
    }

    /// Coordinates of the grid point with flat index `flat`.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .into_iter()
            .zip(&self.sizes)
            .map(|(i, &p)| i as f64 / p as f64)
            .collect()
    }

    /// All grid coordinates, flattened point by point (`len() * dims()` values).
    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).flat_map(|i| self.point(i)).collect()
    }

    pub fn frequencies(&self) -> FrequencySet {
        FrequencySet { grid: self.clone() }
    }
}

impl TryFrom<Vec<usize>> for GridSpec {
    type Error = Error;

    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Self::new(sizes)
    }
}

impl From<GridSpec> for Vec<usize> {
    fn from(grid: GridSpec) -> Self {
        grid.sizes
    }
}

/// A real scalar field sampled on every point of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldValues {
    grid: GridSpec,
    values: Vec<f64>,
}

impl FieldValues {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self::new(grid, values)
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Uniform grid mean, the quadrature used for every integral against the
    /// reference measure.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// The integer frequencies paired with a grid, in standard FFT layout.
///
/// Axis index `k` of an axis with `p` points carries frequency `k` when
/// `k <= (p - 1) / 2` and `k - p` otherwise, so even sizes carry the Nyquist
/// frequency as `-p / 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencySet {
    grid: GridSpec,
}

impl FrequencySet {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of the zero frequency.
    pub fn zero_index(&self) -> usize {
        0
    }

    pub fn frequency(&self, flat: usize) -> Vec<i64> {
        self.grid
            .multi_index(flat)
            .into_iter()
            .zip(self.grid.sizes())
            .map(|(k, &p)| axis_frequency(k, p))
            .collect()
    }

    /// Flat index holding `freq`, after reduction modulo the grid sizes.
    pub fn index_of(&self, freq: &[i64]) -> Option<usize> {
        if freq.len() != self.grid.dims() {
            return None;
        }
        let idx: Vec<usize> = freq
            .iter()
            .zip(self.grid.sizes())
            .map(|(&l, &p)| l.rem_euclid(p as i64) as usize)
            .collect();
        Some(self.grid.flat_index(&idx))
    }

    /// Flat index of `-λ` for the frequency stored at `flat`.
    pub fn negated_index(&self, flat: usize) -> usize {
        let idx: Vec<usize> = self
            .grid
            .multi_index(flat)
            .into_iter()
            .zip(self.grid.sizes())
            .map(|(k, &p)| (p - k) % p)
            .collect();
        self.grid.flat_index(&idx)
    }

    /// Euclidean norm of the integer frequency at `flat`.
    pub fn norm(&self, flat: usize) -> f64 {
        self.frequency(flat)
            .iter()
            .map(|&l| (l * l) as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// Table of `negated_index` for every flat index.
    pub(crate) fn negation_table(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.negated_index(i)).collect()
    }
}

fn axis_frequency(k: usize, p: usize) -> i64 {
    if k <= (p - 1) / 2 {
        k as i64
    } else {
        k as i64 - p as i64
    }
}

/// Truncated Fourier coefficients of a real field, one per grid frequency.
///
/// The represented field is real, so coefficients are Hermitian symmetric
/// (`θ(-λ) = conj θ(λ)`), and the zero-frequency coefficient is pinned to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    freqs: FrequencySet,
    coeffs: Vec<Complex64>,
}

impl CoefficientVector {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            freqs: grid.frequencies(),
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    /// Wraps raw coefficients in FFT layout. The zero frequency is pinned to 0;
    /// symmetry is checked by the inverse transform, not here.
    pub fn new(grid: &GridSpec, mut coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: coeffs.len(),
            });
        }
        if let Some(i) = coeffs.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        coeffs[0] = Complex64::new(0.0, 0.0);
        Ok(Self {
            freqs: grid.frequencies(),
            coeffs,
        })
    }

    pub(crate) fn from_raw(freqs: FrequencySet, coeffs: Vec<Complex64>) -> Self {
        Self { freqs, coeffs }
    }

    pub fn frequencies(&self) -> &FrequencySet {
        &self.freqs
    }

    pub fn grid(&self) -> &GridSpec {
        self.freqs.grid()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn get(&self, freq: &[i64]) -> Option<Complex64> {
        self.freqs.index_of(freq).map(|i| self.coeffs[i])
    }

    /// Sets `θ(λ) = value` and `θ(-λ) = conj(value)`. Self-conjugate
    /// frequencies (Nyquist corners) keep only the real part; the zero
    /// frequency is ignored.
    pub fn set_pair(&mut self, freq: &[i64], value: Complex64) -> Result<()> {
        let i = self
            .freqs
            .index_of(freq)
            .ok_or(Error::DimensionMismatch {
                expected: self.freqs.grid().dims(),
                got: freq.len(),
            })?;
        if i == 0 {
            return Ok(());
        }
        let j = self.freqs.negated_index(i);
        if i == j {
            self.coeffs[i] = Complex64::new(value.re, 0.0);
        } else {
            self.coeffs[i] = value;
            self.coeffs[j] = value.conj();
        }
        Ok(())
    }

    /// Largest `|θ(-λ) - conj θ(λ)|` over the frequency set.
    pub fn hermitian_deviation(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let j = self.freqs.negated_index(i);
                (self.coeffs[j] - self.coeffs[i].conj()).norm()
            })
            .fold(0.0, f64::max)
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().skip(1).map(|c| c.norm()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().skip(1).map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.coeffs.iter().skip(1).map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `sqrt(Σ w_λ |θ_λ|²)`.
    pub fn weighted_norm(&self, weights: &WeightVector) -> f64 {
        self.weighted_sum(weights, |w| w)
    }

    /// `sqrt(Σ |θ_λ|² / w_λ)`.
    pub fn inverse_weighted_norm(&self, weights: &WeightVector) -> f64 {
        self.weighted_sum(weights, |w| 1.0 / w)
    }

    fn weighted_sum(&self, weights: &WeightVector, f: impl Fn(f64) -> f64) -> f64 {
        self.coeffs
            .iter()
            .zip(&weights.weights)
            .skip(1)
            .map(|(c, &w)| f(w) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `self + scale * other`, frequency by frequency.
    pub fn axpy(&self, scale: f64, other: &CoefficientVector) -> Result<CoefficientVector> {
        if other.grid() != self.grid() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a + b * scale)
            .collect();
        Ok(Self::from_raw(self.freqs.clone(), coeffs))
    }

    /// Real inner product `Σ Re(conj(a_λ) b_λ)` over non-zero frequencies.
    pub fn dot(&self, other: &CoefficientVector) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .skip(1)
            .map(|(a, b)| (a.conj() * b).re)
            .sum()
    }
}

/// Positive weights `w_λ` of the diagonal preconditioner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    alpha: f64,
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// One weight per flat frequency index. The zero-frequency entry is 1 and
    /// never used, since that coefficient is pinned.
    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, flat: usize) -> f64 {
        self.weights[flat]
    }
}

/// `w_λ = ‖λ‖^{-α}`; `α = 0` gives all ones.
pub fn make_weights(freqs: &FrequencySet, alpha: f64) -> Result<WeightVector> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(invalid("alpha", format!("must be finite and >= 0, got {alpha}")));
    }
    let weights = (0..freqs.len())
        .map(|i| if i == 0 { 1.0 } else { freqs.norm(i).powf(-alpha) })
        .collect();
    Ok(WeightVector { alpha, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_axes() {
        assert!(GridSpec::new(vec![]).is_err());
        assert!(GridSpec::new(vec![4, 1]).is_err());
        assert!(GridSpec::new(vec![2, 3]).is_ok());
    }

    #[test]
    fn coordinates_are_left_endpoints() {
        let g = GridSpec::new(vec![2, 4]).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g.point(0), vec![0.0, 0.0]);
        assert_eq!(g.point(5), vec![0.5, 0.25]);
        assert!(g.points().iter().all(|&x| (0.0..1.0).contains(&x)));
        for i in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(i)), i);
        }
    }

    #[test]
    fn fft_layout_frequencies() {
        let f = GridSpec::new(vec![8]).unwrap().frequencies();
        let all: Vec<i64> = (0..8).map(|i| f.frequency(i)[0]).collect();
        assert_eq!(all, vec![0, 1, 2, 3, -4, -3, -2, -1]);
        let f = GridSpec::new(vec![5]).unwrap().frequencies();
        let all: Vec<i64> = (0..5).map(|i| f.frequency(i)[0]).collect();
        assert_eq!(all, vec![0, 1, 2, -2, -1]);
    }

    #[test]
    fn frequency_set_closed_under_negation() {
        let f = GridSpec::new(vec![4, 6]).unwrap().frequencies();
        let zeros = (0..f.len())
            .filter(|&i| f.frequency(i).iter().all(|&l| l == 0))
            .count();
        assert_eq!(zeros, 1);
        for i in 0..f.len() {
            let j = f.negated_index(i);
            assert_eq!(f.negated_index(j), i);
            let neg: Vec<i64> = f.frequency(i).iter().map(|l| -l).collect();
            assert_eq!(f.index_of(&neg), Some(j));
        }
    }

    #[test]
    fn weights_follow_power_law() {
        let f = GridSpec::new(vec![8, 8]).unwrap().frequencies();
        let w = make_weights(&f, 2.0).unwrap();
        assert_eq!(w.get(f.index_of(&[1, 0]).unwrap()), 1.0);
        assert!((w.get(f.index_of(&[1, 1]).unwrap()) - 0.5).abs() < 1e-15);

        let w0 = make_weights(&f, 0.0).unwrap();
        assert!(w0.as_slice().iter().all(|&w| w == 1.0));

        let f1 = GridSpec::new(vec![16]).unwrap().frequencies();
        let w = make_weights(&f1, 2.0).unwrap();
        assert!((w.get(f1.index_of(&[3]).unwrap()) - 1.0 / 9.0).abs() < 1e-15);
        assert!(w.as_slice().iter().all(|&w| w > 0.0 && w.is_finite()));

        assert!(make_weights(&f1, f64::NAN).is_err());
    }

    #[test]
    fn set_pair_keeps_symmetry_and_pins_dc() {
        let g = GridSpec::new(vec![8]).unwrap();
        let mut c = CoefficientVector::zeros(&g);
        c.set_pair(&[1], Complex64::new(0.3, -0.2)).unwrap();
        c.set_pair(&[4], Complex64::new(0.1, 0.7)).unwrap();
        c.set_pair(&[0], Complex64::new(5.0, 0.0)).unwrap();
        assert_eq!(c.hermitian_deviation(), 0.0);
        assert_eq!(c.get(&[-1]), Some(Complex64::new(0.3, 0.2)));
        assert_eq!(c.get(&[4]), Some(Complex64::new(0.1, 0.0)));
        assert_eq!(c.get(&[0]), Some(Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn weighted_norms() {
        let g = GridSpec::new(vec![8]).unwrap();
        let w = make_weights(&g.frequencies(), 2.0).unwrap();
        let mut c = CoefficientVector::zeros(&g);
        c.set_pair(&[2], Complex64::new(1.0, 0.0)).unwrap();
        // two coefficients of modulus 1 with w = 1/4
        assert!((c.weighted_norm(&w) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((c.inverse_weighted_norm(&w) - 8f64.sqrt()).abs() < 1e-15);
        assert!((c.l1_norm() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn field_rejects_nan() {
        let g = GridSpec::new(vec![2]).unwrap();
        assert!(matches!(
            FieldValues::new(g.clone(), vec![0.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(FieldValues::new(g, vec![0.0]).is_err());
    }
}
