//! Jaynes-Cummings Hamiltonian and exact propagators for the piecewise-constant
//! Stark control.
//!
//! The joint space is `atom (x) field` with basis ordering `|x, n> -> x * dim + n`
//! for `x` in `g, e, m`. The coupling only connects `|g, n+1>`, `|e, n>` and
//! `|m, n-1>`, so every propagator is block-diagonal with blocks of size at
//! most three. Propagators are exponentiated block by block through Hermitian
//! eigendecompositions, which is exact to machine precision.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{hermitian_defect, max_abs, CMatrix, C64, ONE, ZERO};

/// Atomic level of the three-level ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Atom {
    G = 0,
    E = 1,
    M = 2,
}

impl Atom {
    pub const ALL: [Atom; 3] = [Atom::G, Atom::E, Atom::M];
}

/// Control and interaction parameters of the symmetric reservoir.
///
/// Frequencies are in rad/s, times in s and pulse areas in rad.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReservoirParams {
    pub nbar: usize,
    pub omega: f64,
    pub delta_g: f64,
    pub delta_m: f64,
    pub theta1: f64,
    pub theta2: f64,
    /// Phase accumulated by `|g>` during the middle segment, `(delta_g + delta_m) * t_s`.
    pub phi: f64,
    pub ts: f64,
}

impl ReservoirParams {
    /// ENS-like defaults: `Omega / 2 pi = 50 kHz`, `Delta = 100 Omega`,
    /// trapping `theta1`, `theta2 = 1 / sqrt(nbar)`, `T_s = 60 us`.
    pub fn experimental(nbar: usize) -> Self {
        let omega = TAU * 50e3;
        Self {
            nbar,
            omega,
            delta_g: 50.0 * omega,
            delta_m: 50.0 * omega,
            theta1: trapping_theta1(nbar),
            theta2: 1.0 / (nbar.max(1) as f64).sqrt(),
            phi: 0.0,
            ts: 60e-6,
        }
    }

    pub fn delta_bar(&self) -> f64 {
        (self.delta_g + self.delta_m).abs()
    }

    /// `t_s = theta2 / Omega`.
    pub fn switching_time(&self) -> f64 {
        self.theta2 / self.omega
    }

    /// `T - t_s = 2 theta1 / Omega`.
    pub fn resonant_time(&self) -> f64 {
        2.0 * self.theta1 / self.omega
    }

    pub fn interaction_time(&self) -> f64 {
        self.resonant_time() + self.switching_time()
    }

    pub fn with_theta2(mut self, theta2: f64) -> Self {
        self.theta2 = theta2;
        self
    }

    pub fn with_phi(mut self, phi: f64) -> Self {
        self.phi = phi;
        self
    }

    /// Sets `Delta = ratio * Omega`, split evenly between both detunings.
    pub fn with_detuning_ratio(mut self, ratio: f64) -> Self {
        self.delta_g = 0.5 * ratio * self.omega;
        self.delta_m = 0.5 * ratio * self.omega;
        self
    }

    /// Scales `theta1` by `1 + rel`.
    pub fn with_theta1_error(mut self, rel: f64) -> Self {
        self.theta1 *= 1.0 + rel;
        self
    }

    /// Checks the parameter invariants and returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let finite = [self.omega, self.delta_g, self.delta_m, self.theta1, self.theta2, self.phi, self.ts]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite reservoir parameter".into()));
        }
        if self.nbar < 1 {
            return Err(Error::InvalidParams("nbar must be at least 1".into()));
        }
        if self.omega <= 0.0 {
            return Err(Error::InvalidParams("omega must be positive".into()));
        }
        if self.theta1 <= 0.0 || self.theta2 < 0.0 {
            return Err(Error::InvalidParams("need theta1 > 0 and theta2 >= 0".into()));
        }
        let t = self.interaction_time();
        if t > self.ts * (1.0 + 1e-12) {
            return Err(Error::InvalidParams(format!(
                "interaction time {t:e} s exceeds atom period {:e} s",
                self.ts
            )));
        }
        let mut warnings = Vec::new();
        let ratio = self.delta_bar() / self.omega;
        if ratio < 20.0 {
            warnings.push(format!("Delta / Omega = {ratio:.2} is not large; resonance selectivity is poor"));
        }
        Ok(warnings)
    }

    /// Copy with `delta_m` shifted by the smallest amount that makes the
    /// accumulated middle-segment phase equal to `phi` modulo `2 pi`.
    pub fn phase_locked(&self) -> Self {
        let ts = self.switching_time();
        if ts <= 0.0 {
            return self.clone();
        }
        let current = (self.delta_g + self.delta_m) * ts;
        let shift = wrap_phase(self.phi - current);
        let mut out = self.clone();
        out.delta_m += shift / ts;
        out
    }
}

/// Trapping pulse area `pi / sqrt(nbar + 1)`.
pub fn trapping_theta1(nbar: usize) -> f64 {
    PI / ((nbar + 1) as f64).sqrt()
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub duration: f64,
    pub u: f64,
}

/// Ordered piecewise-constant Stark control.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSchedule {
    pub segments: Vec<Segment>,
}

impl ControlSchedule {
    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

/// `u = -Delta_g, +Delta_m, -Delta_g` over `(T - t_s)/2, t_s, (T - t_s)/2`.
///
/// With `theta2 = 0` the middle segment vanishes and the result is a single
/// resonant segment of length `T`.
pub fn control_schedule(params: &ReservoirParams) -> Result<ControlSchedule> {
    for w in params.validate()? {
        log::warn!("{w}");
    }
    let half = params.resonant_time() / 2.0;
    let ts = params.switching_time();
    let segments = if ts == 0.0 {
        log::warn!("theta2 = 0: schedule degenerates to a single resonant interaction");
        vec![Segment { duration: 2.0 * half, u: -params.delta_g }]
    } else {
        vec![
            Segment { duration: half, u: -params.delta_g },
            Segment { duration: ts, u: params.delta_m },
            Segment { duration: half, u: -params.delta_g },
        ]
    };
    Ok(ControlSchedule { segments })
}

/// Operator on the joint atom-field space.
#[derive(Clone, Debug, PartialEq)]
pub struct JointOperator {
    field_dim: usize,
    mat: CMatrix,
}

impl JointOperator {
    pub fn from_matrix(field_dim: usize, mat: CMatrix) -> Result<Self> {
        if mat.nrows() != 3 * field_dim || mat.ncols() != 3 * field_dim {
            return Err(Error::DimensionMismatch { left: mat.nrows(), right: 3 * field_dim });
        }
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParams("non-finite joint operator entry".into()));
        }
        Ok(Self { field_dim, mat })
    }

    pub fn identity(field_dim: usize) -> Self {
        let n = 3 * field_dim;
        Self { field_dim, mat: CMatrix::identity(n, n) }
    }

    pub fn field_dim(&self) -> usize {
        self.field_dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    /// Matrix element `<x, n| O |y, m>`.
    pub fn element(&self, x: Atom, n: usize, y: Atom, m: usize) -> C64 {
        self.mat[(joint_index(x, n, self.field_dim), joint_index(y, m, self.field_dim))]
    }

    /// `max |O^dagger O - I|`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.mat.nrows();
        max_abs(&(self.mat.adjoint() * &self.mat - CMatrix::identity(n, n)))
    }

    pub fn hermitian_defect(&self) -> f64 {
        hermitian_defect(&self.mat)
    }

    pub fn compose(&self, rhs: &JointOperator) -> Result<JointOperator> {
        if self.field_dim != rhs.field_dim {
            return Err(Error::DimensionMismatch { left: self.field_dim, right: rhs.field_dim });
        }
        Ok(JointOperator { field_dim: self.field_dim, mat: &self.mat * &rhs.mat })
    }
}

pub fn joint_index(x: Atom, n: usize, field_dim: usize) -> usize {
    x as usize * field_dim + n
}

/// Joint indices of the invariant blocks `{|g, k+1>, |e, k>, |m, k-1>}` for
/// `k = -1 ..= dim`; boundary blocks are truncated to the levels that exist.
pub fn excitation_blocks(field_dim: usize) -> Vec<Vec<usize>> {
    let d = field_dim as isize;
    (-1..=d)
        .map(|k| {
            let mut idx = Vec::with_capacity(3);
            if k + 1 >= 0 && k + 1 < d {
                idx.push(joint_index(Atom::G, (k + 1) as usize, field_dim));
            }
            if k >= 0 && k < d {
                idx.push(joint_index(Atom::E, k as usize, field_dim));
            }
            if k - 1 >= 0 && k - 1 < d {
                idx.push(joint_index(Atom::M, (k - 1) as usize, field_dim));
            }
            idx
        })
        .filter(|b| !b.is_empty())
        .collect()
}

/// `H_JC(u) = (Delta_m - u)|m><m| - (Delta_g + u)|g><g|
///            + i Omega/2 (a^dagger (|g><e| + |e><m|) - a (|e><g| + |m><e|))`.
pub fn build_hjc(u: f64, params: &ReservoirParams, field_dim: usize) -> Result<JointOperator> {
    if field_dim < params.nbar + 2 {
        return Err(Error::InvalidDimension { dim: field_dim, min: params.nbar + 2 });
    }
    let n = 3 * field_dim;
    let mut h = CMatrix::zeros(n, n);
    let g_energy = -(params.delta_g + u);
    let m_energy = params.delta_m - u;
    for k in 0..field_dim {
        h[(joint_index(Atom::G, k, field_dim), joint_index(Atom::G, k, field_dim))] = C64::new(g_energy, 0.0);
        h[(joint_index(Atom::M, k, field_dim), joint_index(Atom::M, k, field_dim))] = C64::new(m_energy, 0.0);
    }
    let half = params.omega / 2.0;
    for k in 0..field_dim - 1 {
        let c = C64::new(0.0, half * ((k + 1) as f64).sqrt());
        // a^dagger |g><e| : |e, k> -> |g, k+1>
        let (gi, ei) = (joint_index(Atom::G, k + 1, field_dim), joint_index(Atom::E, k, field_dim));
        h[(gi, ei)] = c;
        h[(ei, gi)] = c.conj();
        // a^dagger |e><m| : |m, k> -> |e, k+1>
        let (ej, mj) = (joint_index(Atom::E, k + 1, field_dim), joint_index(Atom::M, k, field_dim));
        h[(ej, mj)] = c;
        h[(mj, ej)] = c.conj();
    }
    JointOperator::from_matrix(field_dim, h)
}

fn check_hermitian(h: &CMatrix) -> Result<()> {
    let scale = max_abs(h).max(1.0);
    let defect = hermitian_defect(h);
    if defect > 1e-12 * scale {
        return Err(Error::NotHermitian { defect });
    }
    Ok(())
}

/// `exp(-i h t)` for a small Hermitian block.
fn exp_hermitian(h: &CMatrix, t: f64) -> CMatrix {
    let n = h.nrows();
    if n == 1 {
        return CMatrix::from_element(1, 1, C64::new(0.0, -h[(0, 0)].re * t).exp());
    }
    let sym = (h + h.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    let v = &eig.eigenvectors;
    let phases = CMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(0.0, -l * t).exp()));
    v * phases * v.adjoint()
}

fn extract_block(mat: &CMatrix, idx: &[usize]) -> CMatrix {
    CMatrix::from_fn(idx.len(), idx.len(), |r, c| mat[(idx[r], idx[c])])
}

fn scatter_block(target: &mut CMatrix, block: &CMatrix, idx: &[usize]) {
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            target[(i, j)] = block[(r, c)];
        }
    }
}

/// Connected components of the coupling graph of `h`.
fn coupling_blocks(h: &CMatrix) -> Vec<Vec<usize>> {
    let n = h.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if h[(i, j)] != ZERO || h[(j, i)] != ZERO {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = blocks.len();
            blocks.push(Vec::new());
        }
        blocks[slot[r]].push(i);
    }
    blocks
}

/// `U = exp(-i H t)`, exponentiating each decoupled block separately.
pub fn propagate(h: &JointOperator, t: f64) -> Result<JointOperator> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParams(format!("propagation time {t} must be finite and >= 0")));
    }
    check_hermitian(&h.mat)?;
    let n = h.mat.nrows();
    let mut u = CMatrix::zeros(n, n);
    for block in coupling_blocks(&h.mat) {
        let sub = extract_block(&h.mat, &block);
        scatter_block(&mut u, &exp_hermitian(&sub, t), &block);
    }
    Ok(JointOperator { field_dim: h.field_dim, mat: u })
}

/// Propagator of the full control schedule, `U_T = U_1 U_2 U_1`.
///
/// `phi` is realized by [`ReservoirParams::phase_locked`] before the
/// Hamiltonians are built.
pub fn composite_propagator(params: &ReservoirParams, field_dim: usize) -> Result<JointOperator> {
    let locked = params.phase_locked();
    let schedule = control_schedule(&locked)?;
    let hams = schedule
        .segments
        .iter()
        .map(|s| build_hjc(s.u, &locked, field_dim).map(|h| (h, s.duration)))
        .collect::<Result<Vec<_>>>()?;
    for (h, _) in &hams {
        check_hermitian(&h.mat)?;
    }
    let n = 3 * field_dim;
    let mut u = CMatrix::zeros(n, n);
    for block in excitation_blocks(field_dim) {
        let mut acc = CMatrix::identity(block.len(), block.len());
        for (h, dt) in &hams {
            acc = exp_hermitian(&extract_block(&h.mat, &block), *dt) * acc;
        }
        scatter_block(&mut u, &acc, &block);
    }
    Ok(JointOperator { field_dim, mat: u })
}

/// Excitation number of each joint basis state (`n - 1`, `n`, `n + 1` for
/// `g`, `e`, `m`), as a diagonal real operator.
pub fn excitation_operator(field_dim: usize) -> CMatrix {
    let n = 3 * field_dim;
    let mut diag = DMatrix::<C64>::zeros(n, n);
    for x in Atom::ALL {
        for k in 0..field_dim {
            let i = joint_index(x, k, field_dim);
            diag[(i, i)] = ONE.scale(k as f64 + x as usize as f64 - 1.0);
        }
    }
    diag
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_durations() {
        let p = ReservoirParams::experimental(3);
        let s = control_schedule(&p).unwrap();
        assert_eq!(s.segments.len(), 3);
        let resonant = s.segments[0].duration + s.segments[2].duration;
        assert!((resonant - 10e-6).abs() < 1e-18);
        assert_eq!(
            s.segments.iter().map(|x| x.u).collect::<Vec<_>>(),
            vec![-p.delta_g, p.delta_m, -p.delta_g]
        );
        assert!((s.total_duration() - p.interaction_time()).abs() <= 1e-15 * p.interaction_time());

        let walther = control_schedule(&p.clone().with_theta2(0.0)).unwrap();
        assert_eq!(walther.segments.len(), 1);
        let expected = TAU / (p.omega * 2.0);
        assert!((walther.segments[0].duration - expected).abs() < 1e-18);
    }

    #[test]
    fn params_validation() {
        let mut p = ReservoirParams::experimental(2);
        assert!(p.validate().unwrap().is_empty());
        p.ts = 1e-6;
        assert!(p.validate().is_err());
        let p = ReservoirParams::experimental(2).with_detuning_ratio(10.0);
        assert_eq!(p.validate().unwrap().len(), 1);
        let mut p = ReservoirParams::experimental(2);
        p.nbar = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn phase_lock_realizes_phi() {
        for phi in [0.0, 0.7, -2.0, 3.0] {
            let p = ReservoirParams::experimental(3).with_phi(phi).phase_locked();
            let acc = (p.delta_g + p.delta_m) * p.switching_time();
            assert!(wrap_phase(acc - phi).abs() < 1e-9, "phi {phi}");
            assert!((p.delta_m - 50.0 * p.omega).abs() * p.switching_time() <= PI + 1e-12);
        }
    }

    #[test]
    fn hamiltonian_elements() {
        let p = ReservoirParams::experimental(2);
        let dim = 8;
        let h = build_hjc(-p.delta_g, &p, dim).unwrap();
        assert!(h.hermitian_defect() == 0.0);
        for n in 0..dim {
            assert_eq!(h.element(Atom::G, n, Atom::G, n), ZERO);
        }
        for n in 0..dim - 1 {
            let expected = C64::new(0.0, p.omega * ((n + 1) as f64).sqrt() / 2.0);
            assert!((h.element(Atom::G, n + 1, Atom::E, n) - expected).norm() < 1e-9);
        }
        for n in 0..dim {
            for m in 0..dim {
                if n != m + 1 {
                    assert_eq!(h.element(Atom::G, n, Atom::E, m), ZERO);
                }
            }
        }
        assert!(build_hjc(0.0, &p, 3).is_err());
    }

    #[test]
    fn propagate_identity_and_unitarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dim = 12;
        for _ in 0..10 {
            let mut p = ReservoirParams::experimental(rng.gen_range(1..5));
            p.delta_g = rng.gen_range(-80.0..80.0) * p.omega;
            p.delta_m = rng.gen_range(-80.0..80.0) * p.omega;
            let u = rng.gen_range(-100.0..100.0) * p.omega;
            let h = build_hjc(u, &p, dim).unwrap();
            let zero = propagate(&h, 0.0).unwrap();
            assert!(max_abs(&(zero.matrix() - CMatrix::identity(3 * dim, 3 * dim))) < 1e-14);
            let t = rng.gen_range(0.0..40e-6);
            let prop = propagate(&h, t).unwrap();
            assert!(prop.unitarity_defect() < 1e-12);
            for n in 0..dim - 1 {
                for m in 0..dim {
                    if m != n {
                        assert_eq!(prop.element(Atom::G, n + 1, Atom::E, m), ZERO);
                    }
                }
            }
        }
    }

    #[test]
    fn propagate_rejects_non_hermitian() {
        let p = ReservoirParams::experimental(1);
        let h = build_hjc(0.0, &p, 4).unwrap();
        let mut m = h.matrix().clone();
        m[(0, 5)] += C64::new(1.0, 0.0);
        let bad = JointOperator::from_matrix(4, m).unwrap();
        assert!(matches!(propagate(&bad, 1e-6), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn propagate_matches_eigen_route_on_dense_blocks() {
        // Generic fallback path: a Hamiltonian that couples everything.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dim = 3;
        let g = CMatrix::from_fn(9, 9, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let h = JointOperator::from_matrix(dim, (&g + g.adjoint()).scale(0.5)).unwrap();
        let u = propagate(&h, 0.3).unwrap();
        // Taylor series reference.
        let a = h.matrix().scale(0.3) * C64::new(0.0, -1.0);
        let mut term = CMatrix::identity(9, 9);
        let mut sum = term.clone();
        for k in 1..40 {
            term = &term * &a / C64::new(k as f64, 0.0);
            sum += &term;
        }
        assert!(max_abs(&(u.matrix() - sum)) < 1e-12);
    }

    #[test]
    fn segments_conserve_excitation() {
        let p = ReservoirParams::experimental(3);
        let dim = 16;
        let x = excitation_operator(dim);
        for u in [-p.delta_g, p.delta_m] {
            let prop = propagate(&build_hjc(u, &p, dim).unwrap(), 7e-6).unwrap();
            let comm = prop.matrix() * &x - &x * prop.matrix();
            assert!(max_abs(&comm) < 1e-12);
        }
    }

    #[test]
    fn composite_is_product_of_segments() {
        let p = ReservoirParams::experimental(2).with_phi(0.4);
        let dim = 9 * 3;
        let u = composite_propagator(&p, dim).unwrap();
        assert!(u.unitarity_defect() < 1e-10);
        let locked = p.phase_locked();
        let s = control_schedule(&locked).unwrap();
        let mut dense = JointOperator::identity(dim);
        for seg in &s.segments {
            let step = propagate(&build_hjc(seg.u, &locked, dim).unwrap(), seg.duration).unwrap();
            dense = step.compose(&dense).unwrap();
        }
        assert!(max_abs(&(dense.matrix() - u.matrix())) < 1e-11);
    }

    #[test]
    fn composite_degenerates_to_resonant_segment() {
        let p = ReservoirParams::experimental(3).with_theta2(0.0);
        let dim = 12;
        let u = composite_propagator(&p, dim).unwrap();
        let h = build_hjc(-p.delta_g, &p, dim).unwrap();
        let direct = propagate(&h, p.resonant_time()).unwrap();
        assert!(max_abs(&(u.matrix() - direct.matrix())) < 1e-12);
    }

    #[test]
    fn composite_unitary_for_all_targets() {
        for nbar in 1..=8 {
            let p = ReservoirParams::experimental(nbar);
            let u = composite_propagator(&p, 9 * (nbar + 1)).unwrap();
            assert!(u.unitarity_defect() < 1e-10, "nbar {nbar}");
        }
    }

    #[test]
    fn truncation_independent_away_from_boundary() {
        let p = ReservoirParams::experimental(2);
        let small = composite_propagator(&p, 14).unwrap();
        let big = composite_propagator(&p, 28).unwrap();
        for x in Atom::ALL {
            for n in 0..=5 {
                for m in 0..=5 {
                    let d = small.element(x, n, Atom::E, m) - big.element(x, n, Atom::E, m);
                    assert!(d.norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn blocks_cover_joint_space() {
        for dim in [2, 5, 9] {
            let blocks = excitation_blocks(dim);
            let mut all: Vec<usize> = blocks.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..3 * dim).collect::<Vec<_>>());
            assert!(blocks.iter().all(|b| b.len() <= 3));
            assert_eq!(blocks.first().unwrap().len(), 1);
            assert_eq!(blocks.last().unwrap().len(), 1);
        }
    }
}
