//! Fast transforms between grid fields and their truncated Fourier coefficients.
//!
//! Forward: `θ_λ = (1/p) Σ_x conj(φ_λ(x)) f(x)` with `φ_λ(x) = exp(2πi⟨λ, x⟩)`.
//! Inverse: `f(x) = Σ_λ θ_λ φ_λ(x)`. The zero-frequency coefficient is removed
//! by the forward transform and its value (the field mean) is returned aside.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{CoefficientVector, FieldValues, FrequencySet, GridSpec};

/// Relative tolerance on Hermitian symmetry accepted by the inverse transform.
pub const HERMITIAN_TOLERANCE: f64 = 1e-8;

/// Precomputed FFT plans for one grid. Immutable and shareable across threads;
/// buffers live in a caller-owned [`Workspace`].
#[derive(Clone)]
pub struct SpectralPlan {
    grid: GridSpec,
    freqs: FrequencySet,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    negation: Vec<usize>,
}

impl std::fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan").field("grid", &self.grid).finish()
    }
}

/// Scratch buffers for [`SpectralPlan`]; one per thread.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    buf: Vec<Complex64>,
    line: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl SpectralPlan {
    pub fn new(grid: &GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let forward = grid.sizes().iter().map(|&p| planner.plan_fft_forward(p)).collect();
        let inverse = grid.sizes().iter().map(|&p| planner.plan_fft_inverse(p)).collect();
        let freqs = grid.frequencies();
        Self {
            grid: grid.clone(),
            negation: freqs.negation_table(),
            freqs,
            forward,
            inverse,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::default()
    }

    /// Forward transform of a field. Returns the DC-pinned coefficients and the
    /// removed mean.
    pub fn forward(&self, field: &FieldValues) -> Result<(CoefficientVector, f64)> {
        if field.grid() != &self.grid {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                got: field.values().len(),
            });
        }
        let mut ws = self.workspace();
        let mut out = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        let mean = self.forward_into(field.values(), &mut out, &mut ws);
        Ok((CoefficientVector::from_raw(self.freqs.clone(), out), mean))
    }

    /// Real field synthesized from Hermitian coefficients.
    pub fn inverse(&self, coeffs: &CoefficientVector) -> Result<FieldValues> {
        if coeffs.grid() != &self.grid {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                got: coeffs.len(),
            });
        }
        let scale = coeffs.as_slice().iter().map(|c| c.norm()).fold(0.0, f64::max);
        let deviation = coeffs.hermitian_deviation();
        if deviation > HERMITIAN_TOLERANCE * scale {
            return Err(Error::NotHermitian { deviation });
        }
        let mut ws = self.workspace();
        let mut out = vec![0.0; self.grid.len()];
        self.inverse_into(coeffs.as_slice(), &mut out, &mut ws);
        Ok(FieldValues::from_raw(self.grid.clone(), out))
    }

    /// Writes the normalized, symmetrized, DC-pinned coefficients of `values`
    /// into `out` and returns the mean of `values`.
    pub(crate) fn forward_into(
        &self,
        values: &[f64],
        out: &mut [Complex64],
        ws: &mut Workspace,
    ) -> f64 {
        let p = self.grid.len();
        debug_assert_eq!(values.len(), p);
        debug_assert_eq!(out.len(), p);
        for (o, &v) in out.iter_mut().zip(values) {
            *o = Complex64::new(v, 0.0);
        }
        self.transform_nd(out, &self.forward, ws);
        let inv_p = 1.0 / p as f64;
        for c in out.iter_mut() {
            *c *= inv_p;
        }
        self.symmetrize(out);
        out[0] = Complex64::new(0.0, 0.0);
        values.iter().sum::<f64>() * inv_p
    }

    /// Synthesizes the real part of `Σ θ_λ φ_λ` into `out`. No symmetry check.
    pub(crate) fn inverse_into(&self, coeffs: &[Complex64], out: &mut [f64], ws: &mut Workspace) {
        let p = self.grid.len();
        let mut buf = std::mem::take(&mut ws.buf);
        buf.clear();
        buf.extend_from_slice(coeffs);
        debug_assert_eq!(buf.len(), p);
        self.transform_nd(&mut buf, &self.inverse, ws);
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.re;
        }
        ws.buf = buf;
    }

    /// Forces exact Hermitian symmetry by averaging each `±λ` pair.
    pub(crate) fn symmetrize(&self, coeffs: &mut [Complex64]) {
        for i in 0..coeffs.len() {
            let j = self.negation[i];
            if i < j {
                let avg = (coeffs[i] + coeffs[j].conj()) * 0.5;
                coeffs[i] = avg;
                coeffs[j] = avg.conj();
            } else if i == j {
                coeffs[i].im = 0.0;
            }
        }
    }

    fn transform_nd(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>], ws: &mut Workspace) {
        let sizes = self.grid.sizes();
        let d = sizes.len();
        for axis in 0..d {
            let fft = &plans[axis];
            let need = fft.get_inplace_scratch_len();
            if ws.scratch.len() < need {
                ws.scratch.resize(need, Complex64::new(0.0, 0.0));
            }
            let n = sizes[axis];
            let stride: usize = sizes[axis + 1..].iter().product();
            if stride == 1 {
                // contiguous lines: rustfft processes every chunk in one call
                fft.process_with_scratch(data, &mut ws.scratch[..need]);
                continue;
            }
            let outer: usize = sizes[..axis].iter().product();
            ws.line.resize(n, Complex64::new(0.0, 0.0));
            for o in 0..outer {
                let base = o * n * stride;
                for s in 0..stride {
                    for k in 0..n {
                        ws.line[k] = data[base + k * stride + s];
                    }
                    fft.process_with_scratch(&mut ws.line, &mut ws.scratch[..need]);
                    for k in 0..n {
                        data[base + k * stride + s] = ws.line[k];
                    }
                }
            }
        }
    }
}

/// Forward transform with a one-off plan. Returns `(coefficients, mean)`.
pub fn forward_transform(field: &FieldValues) -> Result<(CoefficientVector, f64)> {
    SpectralPlan::new(field.grid()).forward(field)
}

/// Inverse transform with a one-off plan.
pub fn inverse_transform(coeffs: &CoefficientVector) -> Result<FieldValues> {
    SpectralPlan::new(coeffs.grid()).inverse(coeffs)
}
