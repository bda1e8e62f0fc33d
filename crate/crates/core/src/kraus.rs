//! Kraus operators of the reservoir channel and the channel itself.
//!
//! An atom prepared in `|u_at>` interacts with the field and is discarded
//! unmeasured; `U_T |psi>|u_at> = M_g|psi>|g> + M_e|psi>|e> + M_m|psi>|m>` defines
//! the three field operators and `rho -> sum_x M_x rho M_x^dagger` the channel.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::dynamics::{joint_index, Atom, JointOperator, ReservoirParams};
use crate::error::{Error, Result};
use crate::fock::{
    annihilation, creation, max_abs, number_function, number_function_real, sanitize_matrix, CMatrix,
    DensityMatrix, FieldOperator, SanitizeReport, C64, ZERO,
};

const MAX_APPLY_DEFECT: f64 = 1e-6;

/// Operator whose nonzero entries all lie on one diagonal: `M[j + offset, j] = values[j]`.
#[derive(Clone, Debug, PartialEq)]
struct Band {
    offset: isize,
    values: Vec<C64>,
}

impl Band {
    fn detect(m: &CMatrix) -> Option<Band> {
        let dim = m.nrows();
        let mut offset: Option<isize> = None;
        for j in 0..dim {
            for i in 0..dim {
                if m[(i, j)] != ZERO {
                    let o = i as isize - j as isize;
                    match offset {
                        None => offset = Some(o),
                        Some(prev) if prev != o => return None,
                        _ => {}
                    }
                }
            }
        }
        let offset = offset.unwrap_or(0);
        let values = (0..dim)
            .map(|j| {
                let i = j as isize + offset;
                if i >= 0 && (i as usize) < dim {
                    m[(i as usize, j)]
                } else {
                    ZERO
                }
            })
            .collect();
        Some(Band { offset, values })
    }

    /// Adds `M rho M^dagger` into `out`.
    fn accumulate(&self, rho: &CMatrix, out: &mut CMatrix) {
        let dim = rho.nrows() as isize;
        let o = self.offset;
        let (lo, hi) = ((o).max(0), (dim + o).min(dim));
        for j in lo..hi {
            let cj = (j - o) as usize;
            let vj = self.values[cj].conj();
            if vj == ZERO {
                continue;
            }
            for i in lo..hi {
                let ci = (i - o) as usize;
                out[(i as usize, j as usize)] += self.values[ci] * rho[(ci, cj)] * vj;
            }
        }
    }
}

/// The triple `(M_g, M_e, M_m)`.
#[derive(Clone, Debug)]
pub struct KrausSet {
    ops: [FieldOperator; 3],
    bands: Option<[Band; 3]>,
    completeness_defect: f64,
}

impl KrausSet {
    pub fn new(m_g: FieldOperator, m_e: FieldOperator, m_m: FieldOperator) -> Result<Self> {
        let dim = m_g.dim();
        for op in [&m_e, &m_m] {
            if op.dim() != dim {
                return Err(Error::DimensionMismatch { left: dim, right: op.dim() });
            }
        }
        let sum = m_g.matrix().adjoint() * m_g.matrix()
            + m_e.matrix().adjoint() * m_e.matrix()
            + m_m.matrix().adjoint() * m_m.matrix();
        let completeness_defect = max_abs(&(sum - CMatrix::identity(dim, dim)));
        let bands = match (
            Band::detect(m_g.matrix()),
            Band::detect(m_e.matrix()),
            Band::detect(m_m.matrix()),
        ) {
            (Some(g), Some(e), Some(m)) => Some([g, e, m]),
            _ => None,
        };
        Ok(Self { ops: [m_g, m_e, m_m], bands, completeness_defect })
    }

    pub fn dim(&self) -> usize {
        self.ops[0].dim()
    }

    pub fn m_g(&self) -> &FieldOperator {
        &self.ops[0]
    }

    pub fn m_e(&self) -> &FieldOperator {
        &self.ops[1]
    }

    pub fn m_m(&self) -> &FieldOperator {
        &self.ops[2]
    }

    pub fn op(&self, x: Atom) -> &FieldOperator {
        &self.ops[x as usize]
    }

    /// `max |sum_x M_x^dagger M_x - I|`.
    pub fn completeness_defect(&self) -> f64 {
        self.completeness_defect
    }

    /// True when every operator is a shifted diagonal, so the channel maps
    /// each matrix diagonal onto itself.
    pub fn is_shift_diagonal(&self) -> bool {
        self.bands.is_some()
    }

    /// `P[i, j] = sum_x |M_x[i, j]|^2`: populations of `Phi(|j><j|)`.
    pub fn population_transfer(&self) -> DMatrix<f64> {
        let dim = self.dim();
        DMatrix::from_fn(dim, dim, |i, j| self.ops.iter().map(|op| op.get(i, j).norm_sqr()).sum())
    }
}

/// Initial atomic state `|u_at>` in the `(g, e, m)` basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtomState {
    amplitudes: [C64; 3],
}

impl AtomState {
    pub fn new(amplitudes: [C64; 3]) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!("atom state norm^2 {norm} != 1")));
        }
        Ok(Self { amplitudes })
    }

    pub fn basis(x: Atom) -> Self {
        let mut amplitudes = [ZERO; 3];
        amplitudes[x as usize] = C64::new(1.0, 0.0);
        Self { amplitudes }
    }

    pub fn excited() -> Self {
        Self::basis(Atom::E)
    }

    pub fn amplitudes(&self) -> &[C64; 3] {
        &self.amplitudes
    }
}

/// Reads off `M_x[n', n] = <x, n'| U (|u_at> (x) |n>)`.
pub fn extract_kraus(u: &JointOperator, atom: &AtomState) -> Result<KrausSet> {
    let defect = u.unitarity_defect();
    if defect > 1e-10 {
        return Err(Error::NotUnitary { defect });
    }
    let dim = u.field_dim();
    let mat = u.matrix();
    let ops = Atom::ALL.map(|x| {
        CMatrix::from_fn(dim, dim, |row, col| {
            Atom::ALL
                .iter()
                .map(|&y| mat[(joint_index(x, row, dim), joint_index(y, col, dim))] * atom.amplitudes[y as usize])
                .sum()
        })
    });
    let [g, e, m] = ops;
    KrausSet::new(FieldOperator::from_matrix(g)?, FieldOperator::from_matrix(e)?, FieldOperator::from_matrix(m)?)
}

/// Kraus operators of the symmetric three-segment interaction in the
/// large-detuning limit, for an atom entering in `|e>`:
///
/// ```text
/// M_g = a^dagger (e^{i phi} + cos b_N) sin(theta1 sqrt(N+1)) / (2 sqrt(N+1))
/// M_e = cos^2(theta1 sqrt(N+1) / 2) cos b_N - e^{i phi} sin^2(theta1 sqrt(N+1) / 2)
/// M_m = -a (sin b_N / sqrt N) cos(theta1 sqrt(N+1) / 2)
/// ```
///
/// with `b_n = theta2 sqrt(n) / 2`. The unobservable global phase of `M_m`
/// is set to one.
pub fn analytic_kraus(params: &ReservoirParams, dim: usize) -> Result<KrausSet> {
    if dim < params.nbar + 2 {
        return Err(Error::InvalidDimension { dim, min: params.nbar + 2 });
    }
    let (t1, t2) = (params.theta1, params.theta2);
    let phase = C64::from_polar(1.0, params.phi);
    let beta = |n: usize| t2 * (n as f64).sqrt() / 2.0;
    let half1 = |n: usize| t1 * ((n + 1) as f64).sqrt() / 2.0;

    let a = annihilation(dim)?;
    let ad = creation(dim)?;

    let g_phase = number_function(dim, |n| phase + beta(n).cos())?;
    let g_amp = number_function_real(dim, |n| {
        let s = ((n + 1) as f64).sqrt();
        (t1 * s).sin() / (2.0 * s)
    })?;
    let m_g = ad.compose(&g_phase)?.compose(&g_amp)?;

    let m_e = number_function(dim, |n| {
        let (s, c) = half1(n).sin_cos();
        C64::new(c * c * beta(n).cos(), 0.0) - phase * (s * s)
    })?;

    let sinc = number_function_real(dim, |n| {
        if n == 0 {
            t2 / 2.0
        } else {
            beta(n).sin() / (n as f64).sqrt()
        }
    })?;
    let cos_half = number_function_real(dim, |n| half1(n).cos())?;
    let m_m = FieldOperator::from_matrix(-a.compose(&sinc)?.compose(&cos_half)?.into_matrix())?;

    KrausSet::new(m_g, m_e, m_m)
}

/// Resonant two-level trapping reservoir:
/// `M_g = sin(theta_r sqrt(N) / 2) / sqrt(N) a^dagger`,
/// `M_e = cos(theta_r sqrt(N+1) / 2)`, `M_m = 0`.
///
/// On the truncated space the top level `|e, dim-1>` has no partner state, so
/// it is left unchanged, which keeps the channel exactly trace preserving.
pub fn walther_kraus(nbar: usize, theta_r: f64, dim: usize) -> Result<KrausSet> {
    if dim < nbar + 2 {
        return Err(Error::InvalidDimension { dim, min: nbar + 2 });
    }
    let ad = creation(dim)?;
    let sinc = number_function_real(dim, |n| {
        if n == 0 {
            theta_r / 2.0
        } else {
            (theta_r * (n as f64).sqrt() / 2.0).sin() / (n as f64).sqrt()
        }
    })?;
    let m_g = sinc.compose(&ad)?;
    let m_e = number_function_real(dim, |n| {
        if n + 1 == dim {
            1.0
        } else {
            (theta_r * ((n + 1) as f64).sqrt() / 2.0).cos()
        }
    })?;
    KrausSet::new(m_g, m_e, FieldOperator::zeros(dim)?)
}

/// Nominal trapping pulse area `2 pi / sqrt(nbar + 1)` of the resonant scheme.
pub fn walther_theta(nbar: usize) -> f64 {
    2.0 * PI / ((nbar + 1) as f64).sqrt()
}

/// `sum_x M_x rho M_x^dagger` without any post-processing.
pub fn apply_map_raw(k: &KrausSet, rho: &CMatrix) -> Result<CMatrix> {
    if rho.nrows() != k.dim() || rho.ncols() != k.dim() {
        return Err(Error::DimensionMismatch { left: k.dim(), right: rho.nrows() });
    }
    let dim = k.dim();
    let mut out = CMatrix::zeros(dim, dim);
    match &k.bands {
        Some(bands) => {
            for band in bands {
                band.accumulate(rho, &mut out);
            }
        }
        None => {
            for op in &k.ops {
                out += op.matrix() * rho * op.matrix().adjoint();
            }
        }
    }
    Ok(out)
}

/// Applies the channel and returns the sanitized image together with the
/// corrections that were needed.
pub fn apply_map_with_report(k: &KrausSet, rho: &DensityMatrix) -> Result<(DensityMatrix, SanitizeReport)> {
    if k.completeness_defect > MAX_APPLY_DEFECT {
        return Err(Error::IncompleteChannel { defect: k.completeness_defect });
    }
    sanitize_matrix(apply_map_raw(k, rho.matrix())?)
}

pub fn apply_map(k: &KrausSet, rho: &DensityMatrix) -> Result<DensityMatrix> {
    Ok(apply_map_with_report(k, rho)?.0)
}

/// `(d_n, e_n)`: probabilities of losing and gaining one photon from `|n>`
/// under the trapping condition,
/// `d_n = sin^2 b_n cos^2(a_n / 2)`, `e_n = sin^2 a_n cos^4(b_n / 2)`,
/// `a_n = pi sqrt((n+1)/(nbar+1))`, `b_n = theta2 sqrt(n) / 2`.
pub fn transition_rates(params: &ReservoirParams, n: usize) -> (f64, f64) {
    let alpha = PI * (((n + 1) as f64) / ((params.nbar + 1) as f64)).sqrt();
    let beta = params.theta2 * (n as f64).sqrt() / 2.0;
    let d = beta.sin().powi(2) * (alpha / 2.0).cos().powi(2);
    let e = alpha.sin().powi(2) * (beta / 2.0).cos().powi(4);
    (d, e)
}

/// Largest entrywise difference between two operators after rotating
/// `candidate` so its phase matches `reference` at the reference's
/// largest-magnitude entry. Only columns `0..dim-1` are compared: the top
/// column belongs to a truncated boundary block whose exact dynamics differ
/// from the infinite-space formulas.
pub fn phase_aligned_distance(candidate: &FieldOperator, reference: &FieldOperator) -> f64 {
    let dim = reference.dim();
    let r = reference.matrix().columns(0, dim - 1);
    let c = candidate.matrix().columns(0, dim - 1);
    let mut anchor = (0, 0);
    let mut best = -1.0;
    for j in 0..dim - 1 {
        for i in 0..dim {
            if r[(i, j)].norm() > best {
                best = r[(i, j)].norm();
                anchor = (i, j);
            }
        }
    }
    let (rz, cz) = (r[anchor], c[anchor]);
    let rot = if cz.norm() > 0.0 && rz.norm() > 0.0 {
        C64::from_polar(1.0, rz.arg() - cz.arg())
    } else {
        C64::new(1.0, 0.0)
    };
    let mut worst = 0.0f64;
    for j in 0..dim - 1 {
        for i in 0..dim {
            worst = worst.max((c[(i, j)] * rot - r[(i, j)]).norm());
        }
    }
    worst
}

/// Worst [`phase_aligned_distance`] over the three operators.
pub fn kraus_deviation(candidate: &KrausSet, reference: &KrausSet) -> f64 {
    Atom::ALL
        .iter()
        .map(|&x| phase_aligned_distance(candidate.op(x), reference.op(x)))
        .fold(0.0, f64::max)
}
