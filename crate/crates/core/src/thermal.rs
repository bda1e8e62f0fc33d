//! Thermal environment: the discrete photon loss/gain step, the reduced
//! dynamics of the populations, their steady state and the first-order
//! perturbative estimate of the target population.
//!
//! The channel and the environment only couple `rho[i, j]` to
//! `rho[i + l, j + l]`, so populations evolve on their own under
//! `r -> B ((1 - p) I + p A) r` with tridiagonal `A` (reservoir) and `B`
//! (environment).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::ReservoirParams;
use crate::error::{Error, Result};
use crate::fock::{sanitize_matrix, CMatrix, DensityMatrix, SanitizeReport};
use crate::kraus::{apply_map_raw, apply_map_with_report, transition_rates, KrausSet};

/// Upper bound on `Gamma- * dim` for the first-order step to stay meaningful.
pub const STEP_VALIDITY_LIMIT: f64 = 0.5;

const TRIDIAGONAL_TOL: f64 = 1e-12;
const AMBIGUITY_TOL: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-12;
const RATE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    /// Cavity damping rate, 1/s.
    pub kappa: f64,
    /// Mean thermal photon number of the environment.
    pub n_th: f64,
    /// Time between two atoms, s.
    pub ts: f64,
    /// Probability that an atom is present in a given slot.
    pub p_at: f64,
}

impl ThermalParams {
    /// 1/kappa = 0.1 s, n_th = 0.05, 60 us per slot, 30% presence.
    pub fn experimental() -> Self {
        Self { kappa: 10.0, n_th: 0.05, ts: 60e-6, p_at: 0.3 }
    }

    /// No environment and an atom in every slot.
    pub fn none() -> Self {
        Self { kappa: 0.0, n_th: 0.0, ts: 60e-6, p_at: 1.0 }
    }

    pub fn gamma_minus(&self) -> f64 {
        self.kappa * (1.0 + self.n_th) * self.ts
    }

    pub fn gamma_plus(&self) -> f64 {
        self.kappa * self.n_th * self.ts
    }

    pub fn is_isolated(&self) -> bool {
        self.kappa == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParams(format!("kappa = {} must be finite and >= 0", self.kappa)));
        }
        if !(self.n_th >= 0.0 && self.n_th.is_finite()) {
            return Err(Error::InvalidParams(format!("n_th = {} must be finite and >= 0", self.n_th)));
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::InvalidParams(format!("ts = {} must be positive", self.ts)));
        }
        if !(0.0..=1.0).contains(&self.p_at) {
            return Err(Error::InvalidParams(format!("p_at = {} must lie in [0, 1]", self.p_at)));
        }
        Ok(())
    }

    /// Fails when `Gamma- * dim` exceeds [`STEP_VALIDITY_LIMIT`].
    pub fn check_step(&self, dim: usize) -> Result<()> {
        self.validate()?;
        let value = self.gamma_minus() * dim as f64;
        if value >= STEP_VALIDITY_LIMIT {
            return Err(Error::StepValidity { value });
        }
        Ok(())
    }

    /// Slot index reached at time `t`: `floor(t / ts)`.
    pub fn steps_for(&self, t: f64) -> usize {
        (t / self.ts).floor() as usize
    }
}

/// Environment part of one slot on an unnormalized matrix.
pub fn decoherence_raw(sigma: &CMatrix, tp: &ThermalParams) -> CMatrix {
    let dim = sigma.nrows();
    let (gm, gp) = (tp.gamma_minus(), tp.gamma_plus());
    let sq: Vec<f64> = (0..=dim).map(|n| (n as f64).sqrt()).collect();
    CMatrix::from_fn(dim, dim, |i, j| {
        let s = sigma[(i, j)];
        let mut out = s * (1.0 - 0.5 * gm * (i + j) as f64 - 0.5 * gp * (i + j + 2) as f64);
        if i + 1 < dim && j + 1 < dim {
            out += sigma[(i + 1, j + 1)] * (gm * sq[i + 1] * sq[j + 1]);
        }
        if i > 0 && j > 0 {
            out += sigma[(i - 1, j - 1)] * (gp * sq[i] * sq[j]);
        }
        out
    })
}

/// Photon loss and gain over one slot, followed by sanitization. The report's
/// `trace_before` exposes the thermal leak through the top level.
pub fn decoherence_step_with_report(rho: &DensityMatrix, tp: &ThermalParams) -> Result<(DensityMatrix, SanitizeReport)> {
    tp.check_step(rho.dim())?;
    sanitize_matrix(decoherence_raw(rho.matrix(), tp))
}

pub fn decoherence_step(rho: &DensityMatrix, tp: &ThermalParams) -> Result<DensityMatrix> {
    Ok(decoherence_step_with_report(rho, tp)?.0)
}

/// One slot of the expected dynamics: `(1 - p) rho + p Phi(rho)`, then the
/// environment.
pub fn reservoir_step_with_report(
    rho: &DensityMatrix,
    k: &KrausSet,
    tp: &ThermalParams,
) -> Result<(DensityMatrix, SanitizeReport)> {
    tp.check_step(rho.dim())?;
    let p = tp.p_at;
    let mixed = if p == 0.0 {
        rho.matrix().clone()
    } else {
        let (phi, _) = apply_map_with_report(k, rho)?;
        if p == 1.0 {
            phi.into_matrix()
        } else {
            rho.matrix().scale(1.0 - p) + phi.matrix().scale(p)
        }
    };
    sanitize_matrix(decoherence_raw(&mixed, tp))
}

pub fn reservoir_step(rho: &DensityMatrix, k: &KrausSet, tp: &ThermalParams) -> Result<DensityMatrix> {
    Ok(reservoir_step_with_report(rho, k, tp)?.0)
}

/// Single realization: the atom is present with probability `p_at`.
pub fn reservoir_step_sampled<R: Rng>(
    rho: &DensityMatrix,
    k: &KrausSet,
    tp: &ThermalParams,
    rng: &mut R,
) -> Result<DensityMatrix> {
    tp.check_step(rho.dim())?;
    let sigma = if rng.gen_bool(tp.p_at) {
        apply_map_raw(k, rho.matrix())?
    } else {
        rho.matrix().clone()
    };
    Ok(sanitize_matrix(decoherence_raw(&sigma, tp))?.0)
}

/// Real tridiagonal matrix: `lower[j] = M[j + 1, j]`, `upper[j] = M[j, j + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub main: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn dim(&self) -> usize {
        self.main.len()
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.main[i] * r[i];
                if i > 0 {
                    s += self.lower[i - 1] * r[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * r[i + 1];
                }
                s
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.main[i]
            } else if i == j + 1 {
                self.lower[j]
            } else if j == i + 1 {
                self.upper[i]
            } else {
                0.0
            }
        })
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|j| {
                let mut s = self.main[j];
                if j > 0 {
                    s += self.upper[j - 1];
                }
                if j + 1 < n {
                    s += self.lower[j];
                }
                s
            })
            .collect()
    }

    pub fn min_entry(&self) -> f64 {
        self.lower.iter().chain(&self.main).chain(&self.upper).cloned().fold(f64::INFINITY, f64::min)
    }

    /// Reads the three central diagonals of a dense matrix, failing when
    /// anything lies outside them.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        for j in 0..n {
            for i in 0..n {
                if i.abs_diff(j) > 1 && m[(i, j)].abs() > TRIDIAGONAL_TOL {
                    return Err(Error::Precondition(format!(
                        "population transfer is not tridiagonal: entry ({i}, {j}) = {:e}",
                        m[(i, j)]
                    )));
                }
            }
        }
        Ok(Self {
            lower: (0..n - 1).map(|j| m[(j + 1, j)]).collect(),
            main: (0..n).map(|j| m[(j, j)]).collect(),
            upper: (0..n - 1).map(|j| m[(j, j + 1)]).collect(),
        })
    }
}

/// Population dynamics of the reservoir (`a`) and the environment (`b`).
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedDynamics {
    pub a: Tridiagonal,
    pub b: Tridiagonal,
}

impl ReducedDynamics {
    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// `A` from the channel's population transfer, `B` from `tp`.
    pub fn from_kraus(k: &KrausSet, tp: &ThermalParams) -> Result<Self> {
        let a = Tridiagonal::from_dense(&k.population_transfer())?;
        Ok(Self { b: environment_matrix(tp, k.dim()), a })
    }

    /// `r -> B ((1 - p) r + p A r)`.
    pub fn step(&self, r: &[f64], p_at: f64) -> Vec<f64> {
        let ar = self.a.apply(r);
        let mixed: Vec<f64> = r.iter().zip(&ar).map(|(x, y)| (1.0 - p_at) * x + p_at * y).collect();
        self.b.apply(&mixed)
    }

    /// Dense `B ((1 - p) I + p A)`.
    pub fn transfer_matrix(&self, p_at: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mixed = DMatrix::<f64>::identity(n, n) * (1.0 - p_at) + self.a.to_dense() * p_at;
        self.b.to_dense() * mixed
    }
}

/// Environment populations matrix: `|n> -> |n-1>` with `Gamma- n`,
/// `|n> -> |n+1>` with `Gamma+ (n+1)`. The upward rate out of the top level
/// is dropped, so the last column sums to `1 - Gamma+ dim`.
pub fn environment_matrix(tp: &ThermalParams, dim: usize) -> Tridiagonal {
    let (gm, gp) = (tp.gamma_minus(), tp.gamma_plus());
    Tridiagonal {
        lower: (0..dim - 1).map(|j| gp * (j + 1) as f64).collect(),
        main: (0..dim).map(|j| 1.0 - gm * j as f64 - gp * (j + 1) as f64).collect(),
        upper: (0..dim - 1).map(|j| gm * (j + 1) as f64).collect(),
    }
}

/// Reduced dynamics with the ideal reservoir rates `(d_n, e_n)`.
pub fn build_reduced(params: &ReservoirParams, tp: &ThermalParams, dim: usize) -> Result<ReducedDynamics> {
    let min = 4 * params.nbar + 4;
    if dim < min {
        return Err(Error::InvalidDimension { dim, min });
    }
    let rates: Vec<(f64, f64)> = (0..dim).map(|n| transition_rates(params, n)).collect();
    let a = Tridiagonal {
        lower: (0..dim - 1).map(|j| rates[j].1).collect(),
        main: (0..dim).map(|j| 1.0 - rates[j].0 - if j + 1 < dim { rates[j].1 } else { 0.0 }).collect(),
        upper: (0..dim - 1).map(|j| rates[j + 1].0).collect(),
    };
    Ok(ReducedDynamics { a, b: environment_matrix(tp, dim) })
}

/// Steady populations and diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct SteadyState {
    pub populations: Vec<f64>,
    /// Second-smallest singular value of `T - I`.
    pub gap: f64,
    /// `1 - lambda` for the dominant eigenvalue; nonzero only through the
    /// truncated top level.
    pub leak: f64,
    pub residual: f64,
}

/// Dominant eigenvector of `T = B ((1 - p) I + p A)`, normalized to sum 1.
///
/// The normalization row is appended to `T - I` and the system solved in the
/// least-squares sense; inverse iteration then polishes the result. When
/// `T - I` has a second singular value below tolerance the eigenvalue-1
/// space is not one-dimensional and the call fails.
pub fn steady_state(rd: &ReducedDynamics, p_at: f64) -> Result<SteadyState> {
    if !(0.0..=1.0).contains(&p_at) {
        return Err(Error::InvalidParams(format!("p_at = {p_at} must lie in [0, 1]")));
    }
    let n = rd.dim();
    let t = rd.transfer_matrix(p_at);
    let shifted = &t - DMatrix::<f64>::identity(n, n);

    let mut sv: Vec<f64> = shifted.clone().singular_values().iter().cloned().collect();
    sv.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let gap = sv[1];
    if gap < AMBIGUITY_TOL {
        return Err(Error::AmbiguousSteadyState { gap });
    }

    let mut aug = DMatrix::<f64>::zeros(n + 1, n);
    aug.view_mut((0, 0), (n, n)).copy_from(&shifted);
    aug.row_mut(n).fill(1.0);
    let mut rhs = DVector::<f64>::zeros(n + 1);
    rhs[n] = 1.0;
    let svd = aug.svd(true, true);
    let x = svd
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::InvalidParams(format!("least-squares solve failed: {e}")))?;
    let mut r: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    normalize(&mut r);

    // sigma > 1 lies outside the spectrum, and (sigma I - T)^-1 is entrywise
    // non-negative, so the iteration keeps r a probability vector.
    let sigma = 1.0 + 1e-9;
    let lu = (DMatrix::<f64>::identity(n, n) * sigma - &t).lu();
    let mut residual = f64::INFINITY;
    let mut lambda = 1.0;
    for _ in 0..50 {
        let tr = &t * DVector::from_column_slice(&r);
        lambda = tr.sum();
        residual = (0..n).map(|i| (tr[i] - lambda * r[i]).abs()).fold(0.0, f64::max);
        if residual < RESIDUAL_TOL {
            break;
        }
        let y = lu
            .solve(&DVector::from_column_slice(&r))
            .ok_or_else(|| Error::InvalidParams("singular shifted transfer matrix".into()))?;
        r = y.iter().map(|v| v.max(0.0)).collect();
        normalize(&mut r);
    }
    if residual >= RESIDUAL_TOL {
        return Err(Error::NoConvergence { steps: 50, change: residual });
    }
    Ok(SteadyState { populations: r, gap, leak: 1.0 - lambda, residual })
}

fn normalize(r: &mut [f64]) {
    let s: f64 = r.iter().sum();
    r.iter_mut().for_each(|v| *v /= s);
}

/// First-order correction `x1[nbar]` to the target population (so the
/// estimated fidelity is `1 + x1[nbar]`), summing the upper branch up to the
/// invariant barrier `4 nbar + 3`.
///
/// The reservoir rates are scaled by `p_at`, which extends the estimate to
/// partially filled atom beams.
pub fn prop2_estimate(params: &ReservoirParams, tp: &ThermalParams, p_at: f64) -> Result<f64> {
    prop2_estimate_capped(params, tp, p_at, 4 * params.nbar + 3)
}

/// As [`prop2_estimate`] with the upper branch summed up to level `cap`.
pub fn prop2_estimate_capped(params: &ReservoirParams, tp: &ThermalParams, p_at: f64, cap: usize) -> Result<f64> {
    let nbar = params.nbar;
    if nbar < 1 {
        return Err(Error::InvalidParams("nbar must be at least 1".into()));
    }
    if cap <= nbar {
        return Err(Error::InvalidParams(format!("cap {cap} must exceed nbar {nbar}")));
    }
    if !(p_at > 0.0 && p_at <= 1.0) {
        return Err(Error::InvalidParams(format!("p_at = {p_at} must lie in (0, 1]")));
    }
    let d = |n: usize| p_at * transition_rates(params, n).0;
    let e = |n: usize| p_at * transition_rates(params, n).1;
    let check = |name: &str, v: f64| {
        if v > RATE_FLOOR {
            Ok(v)
        } else {
            Err(Error::PerturbationInvalid { rate: name.to_string(), value: v })
        }
    };
    let loss = tp.gamma_minus() * nbar as f64;
    let gain = tp.gamma_plus() * (nbar + 1) as f64;

    let mut total = 0.0;
    let mut x = loss / check(&format!("e_{}", nbar - 1), e(nbar - 1))?;
    total += x;
    for n in (0..nbar - 1).rev() {
        x *= d(n + 1) / check(&format!("e_{n}"), e(n))?;
        total += x;
    }

    let mut x = gain / check(&format!("d_{}", nbar + 1), d(nbar + 1))?;
    total += x;
    for n in (nbar + 2)..=cap {
        let up = e(n - 1);
        if up == 0.0 {
            break;
        }
        x *= up / check(&format!("d_{n}"), d(n))?;
        total += x;
    }
    Ok(-total)
}

/// Outcome of iterating the full map until it stops moving.
#[derive(Clone, Debug)]
pub struct Stationary {
    pub state: DensityMatrix,
    pub steps: usize,
    /// Total trace lost through the top level along the way.
    pub leak: f64,
}

/// Iterates [`reservoir_step`] until `max |rho_{k+1} - rho_k| < tol`.
pub fn iterate_to_stationarity(
    rho0: &DensityMatrix,
    k: &KrausSet,
    tp: &ThermalParams,
    tol: f64,
    cap: usize,
) -> Result<Stationary> {
    let mut rho = rho0.clone();
    let mut leak = 0.0;
    let mut change = f64::INFINITY;
    for step in 1..=cap {
        let (next, report) = reservoir_step_with_report(&rho, k, tp)?;
        leak += 1.0 - report.trace_before;
        change = (next.matrix() - rho.matrix()).iter().fold(0.0, |acc, z| acc.max(z.norm()));
        rho = next;
        if change < tol {
            return Ok(Stationary { state: rho, steps: step, leak });
        }
    }
    Err(Error::NoConvergence { steps: cap, change })
}
