//! Truncated Fock-space primitives.
//!
//! Levels are indexed `0..dim`; operators are dense `dim x dim` complex
//! matrices. Truncation makes `a a^dagger` differ from `N + I` on the top
//! level only, while `a^dagger a = N` and the shift identity
//! `a f(N) = f(N + I) a` hold exactly.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-9;

/// Largest entrywise modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Largest entrywise modulus of `m - m^dagger`.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Dense operator on the truncated field space.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldOperator {
    mat: CMatrix,
}

impl FieldOperator {
    pub fn from_matrix(mat: CMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch { left: mat.nrows(), right: mat.ncols() });
        }
        if mat.nrows() < 2 {
            return Err(Error::InvalidDimension { dim: mat.nrows(), min: 2 });
        }
        if let Some(idx) = mat.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite { n: idx % mat.nrows() });
        }
        Ok(Self { mat })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::from_matrix(CMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::from_matrix(CMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn adjoint(&self) -> Self {
        Self { mat: self.mat.adjoint() }
    }

    pub fn compose(&self, rhs: &FieldOperator) -> Result<Self> {
        if self.dim() != rhs.dim() {
            return Err(Error::DimensionMismatch { left: self.dim(), right: rhs.dim() });
        }
        Ok(Self { mat: &self.mat * &rhs.mat })
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.mat[(row, col)]
    }
}

/// Photon annihilation operator: `(n-1, n)` entry is `sqrt(n)`.
pub fn annihilation(dim: usize) -> Result<FieldOperator> {
    if dim < 2 {
        return Err(Error::InvalidDimension { dim, min: 2 });
    }
    let mut m = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    FieldOperator::from_matrix(m)
}

pub fn creation(dim: usize) -> Result<FieldOperator> {
    Ok(annihilation(dim)?.adjoint())
}

pub fn number_operator(dim: usize) -> Result<FieldOperator> {
    number_function(dim, |n| C64::new(n as f64, 0.0))
}

/// `f(N) = diag(f(0), ..., f(dim-1))`.
///
/// Functions with a removable singularity must return the limit value
/// themselves; a non-finite value is reported with the offending level.
pub fn number_function<F>(dim: usize, f: F) -> Result<FieldOperator>
where
    F: Fn(usize) -> C64,
{
    if dim < 2 {
        return Err(Error::InvalidDimension { dim, min: 2 });
    }
    let mut m = CMatrix::zeros(dim, dim);
    for n in 0..dim {
        let v = f(n);
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(Error::NonFinite { n });
        }
        m[(n, n)] = v;
    }
    FieldOperator::from_matrix(m)
}

/// Real-valued convenience wrapper around [`number_function`].
pub fn number_function_real<F>(dim: usize, f: F) -> Result<FieldOperator>
where
    F: Fn(usize) -> f64,
{
    number_function(dim, |n| C64::new(f(n), 0.0))
}

/// Hermitian, positive-semidefinite, unit-trace field state.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    mat: CMatrix,
}

impl DensityMatrix {
    /// Validates all invariants, including the spectrum.
    pub fn from_matrix(mat: CMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch { left: mat.nrows(), right: mat.ncols() });
        }
        if mat.nrows() < 2 {
            return Err(Error::InvalidDimension { dim: mat.nrows(), min: 2 });
        }
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite entry".into()));
        }
        let herm = hermitian_defect(&mat);
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("Hermitian defect {herm:e}")));
        }
        let tr = mat.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        let sym = (&mat + mat.adjoint()).scale(0.5);
        let min_eig = sym.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < -PSD_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(Self { mat })
    }

    /// Skips every check; test helper for drifted states.
    #[cfg(test)]
    pub(crate) fn from_trusted(mat: CMatrix) -> Self {
        Self { mat }
    }

    /// `|k><k|`.
    pub fn fock(dim: usize, k: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension { dim, min: 2 });
        }
        if k >= dim {
            return Err(Error::IndexOutOfRange { index: k, dim });
        }
        let mut m = CMatrix::zeros(dim, dim);
        m[(k, k)] = ONE;
        Ok(Self { mat: m })
    }

    /// Diagonal state from (non-negative) populations, normalized to unit trace.
    pub fn from_populations(pops: &[f64]) -> Result<Self> {
        let dim = pops.len();
        if dim < 2 {
            return Err(Error::InvalidDimension { dim, min: 2 });
        }
        if pops.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidState("populations must be finite and non-negative".into()));
        }
        let total: f64 = pops.iter().sum();
        if total < 1e-6 {
            return Err(Error::DegenerateState { trace: total });
        }
        let mut m = CMatrix::zeros(dim, dim);
        for (n, p) in pops.iter().enumerate() {
            m[(n, n)] = C64::new(p / total, 0.0);
        }
        Ok(Self { mat: m })
    }

    /// Uniform mixture over the levels of `window`.
    pub fn uniform(dim: usize, window: FockWindow) -> Result<Self> {
        if window.hi >= dim {
            return Err(Error::IndexOutOfRange { index: window.hi, dim });
        }
        let pops: Vec<f64> =
            (0..dim).map(|n| if window.contains(n) { 1.0 } else { 0.0 }).collect();
        Self::from_populations(&pops)
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        Self::from_populations(&vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|n| self.mat[(n, n)].re).collect()
    }

    pub fn fidelity(&self, n: usize) -> Result<f64> {
        fidelity(self, n)
    }
}

/// Population `<n|rho|n>` of Fock level `n`.
pub fn fidelity(rho: &DensityMatrix, n: usize) -> Result<f64> {
    if n >= rho.dim() {
        return Err(Error::IndexOutOfRange { index: n, dim: rho.dim() });
    }
    let z = rho.mat[(n, n)];
    debug_assert!(z.im.abs() < 1e-10, "imaginary population {}", z.im);
    Ok(z.re)
}

/// Corrections applied by [`sanitize`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SanitizeReport {
    /// Largest entry of the removed anti-Hermitian part.
    pub antihermitian_removed: f64,
    /// Real trace before renormalization.
    pub trace_before: f64,
}

/// Hermitizes and renormalizes a drifted state matrix.
pub fn sanitize_matrix(mat: CMatrix) -> Result<(DensityMatrix, SanitizeReport)> {
    if mat.nrows() != mat.ncols() {
        return Err(Error::DimensionMismatch { left: mat.nrows(), right: mat.ncols() });
    }
    let n = mat.nrows();
    let mut out = mat;
    let mut removed = 0.0f64;
    for i in 0..n {
        let d = out[(i, i)];
        removed = removed.max(d.im.abs());
        out[(i, i)] = C64::new(d.re, 0.0);
        for j in (i + 1)..n {
            let upper = out[(i, j)];
            let lower = out[(j, i)];
            let avg = (upper + lower.conj()).scale(0.5);
            removed = removed.max((upper - avg).norm());
            out[(i, j)] = avg;
            out[(j, i)] = avg.conj();
        }
    }
    let trace: f64 = (0..n).map(|i| out[(i, i)].re).sum();
    if !trace.is_finite() || trace < 1e-6 {
        return Err(Error::DegenerateState { trace });
    }
    if trace != 1.0 {
        out.unscale_mut(trace);
    }
    Ok((
        DensityMatrix { mat: out },
        SanitizeReport { antihermitian_removed: removed, trace_before: trace },
    ))
}

pub fn sanitize(rho: &DensityMatrix) -> Result<(DensityMatrix, SanitizeReport)> {
    sanitize_matrix(rho.mat.clone())
}

/// Inclusive range of Fock levels `lo..=hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FockWindow {
    pub lo: usize,
    pub hi: usize,
}

impl FockWindow {
    pub fn new(lo: usize, hi: usize) -> Result<Self> {
        if hi < lo {
            return Err(Error::InvalidParams(format!("empty window [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    /// `[0, 4 nbar + 3]`, the invariant window of the symmetric scheme.
    pub fn stabilized(nbar: usize) -> Self {
        Self { lo: 0, hi: 4 * nbar + 3 }
    }

    /// `[0, 9 nbar + 8]`.
    pub fn extended(nbar: usize) -> Self {
        Self { lo: 0, hi: 9 * nbar + 8 }
    }

    pub fn contains(&self, n: usize) -> bool {
        n >= self.lo && n <= self.hi
    }
}

/// True when both the population outside `w` and every off-diagonal
/// row/column norm outside `w` are below `tol`.
pub fn support_in(rho: &DensityMatrix, w: FockWindow, tol: f64) -> bool {
    let dim = rho.dim();
    let mut outside_pop = 0.0;
    for n in (0..dim).filter(|n| !w.contains(*n)) {
        outside_pop += rho.mat[(n, n)].re.abs();
        let row_norm: f64 = (0..dim)
            .filter(|m| *m != n)
            .map(|m| rho.mat[(n, m)].norm_sqr() + rho.mat[(m, n)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if row_norm >= tol {
            return false;
        }
    }
    outside_pop < tol
}
