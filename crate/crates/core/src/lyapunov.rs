//! Strict Lyapunov function `V(rho) = trace(f(N) rho)` for the symmetric
//! reservoir under the trapping condition.
//!
//! `f` vanishes at the target, equals one on both neighbours, and is built
//! outward by two recurrences chosen so that `V(Phi(rho)) - V(rho)` is the
//! expectation of a diagonal `q(N)` that is strictly negative away from the
//! target inside the invariant window.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fock::{support_in, DensityMatrix, FockWindow};
use crate::dynamics::ReservoirParams;
use crate::kraus::{apply_map, transition_rates, KrausSet};

/// Default tolerance of [`validate_theta2`], in rad.
pub const THETA2_TOL: f64 = 1e-9;

/// Default mixing parameter of the weight recurrences.
pub const DEFAULT_ETA: f64 = 0.5;

fn alpha(n: usize, nbar: usize) -> f64 {
    PI * (((n + 1) as f64) / ((nbar + 1) as f64)).sqrt()
}

fn beta(n: usize, theta2: f64) -> f64 {
    theta2 * (n as f64).sqrt() / 2.0
}

/// First `(n, k)` with `|theta2 - k pi / sqrt(n)| < tol`, scanning
/// `n = 1..=top`.
pub fn find_resonance(theta2: f64, top: usize, tol: f64) -> Option<(usize, usize)> {
    let kmax = (theta2 * (top as f64).sqrt() / PI).ceil() as usize + 1;
    for n in 1..=top {
        let step = PI / (n as f64).sqrt();
        for k in 1..=kmax {
            if (theta2 - k as f64 * step).abs() < tol {
                return Some((n, k));
            }
        }
    }
    None
}

/// False iff `theta2` is within `tol` of some `k pi / sqrt(n)` with
/// `1 <= n <= 4 nbar + 3`.
pub fn validate_theta2(theta2: f64, nbar: usize, tol: f64) -> bool {
    find_resonance(theta2, 4 * nbar + 3, tol).is_none()
}

/// Weights `f(n)` and decrease rates `q(n)` on `0..dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovWeights {
    pub nbar: usize,
    pub eta: f64,
    pub theta2: f64,
    /// Last level covered by the recurrences; `f` is flat above it.
    pub top: usize,
    pub f: Vec<f64>,
    pub q: Vec<f64>,
}

impl LyapunovWeights {
    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn window(&self) -> FockWindow {
        FockWindow { lo: 0, hi: self.top }
    }
}

/// Weights on the invariant window `[0, 4 nbar + 3]`.
pub fn build_weights(nbar: usize, theta2: f64, eta: f64, dim: usize) -> Result<LyapunovWeights> {
    build_weights_to(nbar, theta2, eta, dim, 4 * nbar + 3)
}

/// Weights with the recurrences carried up to `top`. With `top = 9 nbar + 8`
/// the resulting `V` is only non-strict: `q` also vanishes at the top level.
pub fn build_weights_to(nbar: usize, theta2: f64, eta: f64, dim: usize, top: usize) -> Result<LyapunovWeights> {
    if nbar < 1 {
        return Err(Error::InvalidParams("nbar must be at least 1".into()));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParams(format!("eta = {eta} must lie in (0, 1)")));
    }
    if top < nbar + 2 || top >= dim {
        return Err(Error::InvalidParams(format!(
            "window top {top} must satisfy nbar + 2 <= top < dim = {dim}"
        )));
    }
    if !(theta2 > 0.0) {
        return Err(Error::InvalidParams("theta2 must be positive".into()));
    }
    if let Some((n, k)) = find_resonance(theta2, top, THETA2_TOL) {
        return Err(Error::ResonantTheta2 { theta2, n, k });
    }

    // Increments are carried separately: for small theta2 they drop below
    // one ulp of f long before they underflow, and q needs them exactly.
    let mut f = vec![0.0; dim];
    let mut down = vec![0.0; dim]; // f[n] - f[n + 1] for n < nbar
    let mut up = vec![0.0; dim]; // f[n] - f[n - 1] for nbar < n <= top
    f[nbar + 1] = 1.0;
    f[nbar - 1] = 1.0;
    down[nbar - 1] = 1.0;
    up[nbar + 1] = 1.0;
    for n in (1..nbar).rev() {
        let w = eta * (alpha(n, nbar) / 2.0).sin().powi(2) * (beta(n, theta2) / 2.0).cos().powi(2);
        down[n - 1] = w * down[n];
        f[n - 1] = f[n] + down[n - 1];
    }
    for n in (nbar + 1)..top {
        let w = eta * (beta(n, theta2) / 2.0).sin().powi(2);
        up[n + 1] = w * up[n];
        f[n + 1] = f[n] + up[n + 1];
    }
    for n in (top + 1)..dim {
        f[n] = f[top];
    }

    let q = (0..dim)
        .map(|n| {
            let (a, b) = (alpha(n, nbar), beta(n, theta2));
            if n < nbar {
                a.sin().powi(2) * (b / 2.0).cos().powi(4) * (eta * (b / 2.0).sin().powi(2) - 1.0) * down[n]
            } else if n > nbar && n <= top {
                b.sin().powi(2)
                    * (a / 2.0).cos().powi(2)
                    * (eta * (a / 2.0).sin().powi(2) * (b / 2.0).cos().powi(2) - 1.0)
                    * up[n]
            } else {
                0.0
            }
        })
        .collect();

    Ok(LyapunovWeights { nbar, eta, theta2, top, f, q })
}

/// `V(rho) = sum_n f(n) rho[n, n]`.
pub fn evaluate_v(rho: &DensityMatrix, w: &LyapunovWeights) -> Result<f64> {
    expectation(rho, &w.f)
}

fn expectation(rho: &DensityMatrix, weights: &[f64]) -> Result<f64> {
    if rho.dim() != weights.len() {
        return Err(Error::DimensionMismatch { left: weights.len(), right: rho.dim() });
    }
    let m = rho.matrix();
    let mut re = 0.0;
    let mut im = 0.0;
    for (n, fw) in weights.iter().enumerate() {
        re += fw * m[(n, n)].re;
        im += fw * m[(n, n)].im;
    }
    debug_assert!(im.abs() < 1e-10);
    Ok(re)
}

/// Measured and predicted one-step change of `V`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decrease {
    /// `V(Phi(rho)) - V(rho)`.
    pub delta_v: f64,
    /// `trace(q(N) rho)`.
    pub predicted: f64,
}

/// Applies the channel once and compares the change of `V` with the
/// closed-form prediction. `rho` must live inside the weights' window.
pub fn check_decrease(k: &KrausSet, w: &LyapunovWeights, rho: &DensityMatrix) -> Result<Decrease> {
    if k.dim() != w.dim() {
        return Err(Error::DimensionMismatch { left: k.dim(), right: w.dim() });
    }
    if !support_in(rho, w.window(), 1e-9) {
        return Err(Error::Precondition(format!("state is not supported in [0, {}]", w.top)));
    }
    let before = evaluate_v(rho, w)?;
    let after = evaluate_v(&apply_map(k, rho)?, w)?;
    Ok(Decrease { delta_v: after - before, predicted: expectation(rho, &w.q)? })
}

/// Spectral radius of the ideal population chain on `0..=4 nbar + 3` with the
/// target level removed: off-target populations shrink at least like
/// `rate^k`, up to a constant.
///
/// The chain is birth-death, hence similar to the symmetric tridiagonal
/// matrix with off-diagonals `sqrt(A[i+1, i] A[i, i+1])`.
pub fn window_contraction(params: &ReservoirParams) -> f64 {
    let nbar = params.nbar;
    let levels: Vec<usize> = (0..=4 * nbar + 3).filter(|&n| n != nbar).collect();
    let rates: Vec<(f64, f64)> = (0..=4 * nbar + 4).map(|n| transition_rates(params, n)).collect();
    let m = levels.len();
    let sym = nalgebra::DMatrix::from_fn(m, m, |i, j| {
        let (a, b) = (levels[i], levels[j]);
        if a == b {
            let up = if a < 4 * nbar + 3 { rates[a].1 } else { 0.0 };
            1.0 - rates[a].0 - up
        } else if a.abs_diff(b) == 1 {
            let lo = a.min(b);
            (rates[lo].1 * rates[lo + 1].0).sqrt()
        } else {
            0.0
        }
    });
    sym.symmetric_eigenvalues().iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
