//! Experiment runner behind the `fockres` command-line tool.
//!
//! Every experiment takes an [`ExperimentConfig`] and returns a typed result
//! that converts into a [`Report`] for CSV or JSON output. Sweeps evaluate
//! their points in parallel and keep the rows in sweep order.

pub mod config;
pub mod output;

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{ChannelKind, ExperimentConfig, InitialState, OutputFormat, Scheme};
pub use output::{Cell, Report, Table};

use crate::dynamics::{composite_propagator, ReservoirParams};
use crate::error::{Error, Result};
use crate::fock::{max_abs, CMatrix, DensityMatrix, FockWindow, C64};
use crate::kraus::{
    analytic_kraus, apply_map_raw, apply_map_with_report, extract_kraus, walther_kraus, walther_theta, AtomState,
    KrausSet,
};
use crate::lyapunov::{build_weights, check_decrease, evaluate_v, validate_theta2, LyapunovWeights, THETA2_TOL};
use crate::thermal::{
    build_reduced, iterate_to_stationarity, prop2_estimate, reservoir_step_with_report, steady_state,
    ReducedDynamics, ThermalParams,
};

/// Max-norm change per step below which the full map counts as stationary.
pub const STATIONARITY_TOL: f64 = 1e-10;
/// Step cap of the stationarity iteration.
pub const STATIONARITY_CAP: usize = 1_000_000;

const GOLDEN_TOL: f64 = 1e-3;
const FLAT_TOL: f64 = 1e-6;

/// Kraus operators for a scheme. `theta1_error` scales `theta1`, or the
/// resonant pulse area for the baseline, by `1 + theta1_error`. The baseline
/// always uses its closed-form two-level operators.
pub fn build_channel(
    scheme: Scheme,
    channel: ChannelKind,
    params: &ReservoirParams,
    theta1_error: f64,
    dim: usize,
) -> Result<KrausSet> {
    match scheme {
        Scheme::Walther => walther_kraus(params.nbar, walther_theta(params.nbar) * (1.0 + theta1_error), dim),
        Scheme::Symmetric => {
            let p = params.clone().with_theta1_error(theta1_error);
            match channel {
                ChannelKind::Analytic => analytic_kraus(&p, dim),
                ChannelKind::Numeric => extract_kraus(&composite_propagator(&p, dim)?, &AtomState::excited()),
            }
        }
    }
}

fn channel_for(cfg: &ExperimentConfig, params: &ReservoirParams) -> Result<KrausSet> {
    build_channel(cfg.scheme, cfg.channel, params, cfg.theta1_error, cfg.dim)
}

fn renormalized(mut r: Vec<f64>) -> Vec<f64> {
    let s: f64 = r.iter().sum();
    if s > 0.0 {
        r.iter_mut().for_each(|v| *v /= s);
    }
    r
}

/// Outcome of the phase search.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTuning {
    pub phi: f64,
    pub fidelity: f64,
    /// Objective at the configured `phi`.
    pub untuned_fidelity: f64,
    /// The objective varied by less than 1e-6 over the grid; `phi` is 0.
    pub flat: bool,
    pub grid: Vec<(f64, f64)>,
}

impl PhaseTuning {
    pub fn to_report(&self) -> Report {
        let mut t = Table::new(["phi", "fidelity"]);
        for (phi, f) in &self.grid {
            t.push(vec![(*phi).into(), (*f).into()]);
        }
        Report::new(t)
            .with("phi_opt", self.phi)
            .with("fidelity", self.fidelity)
            .with("untuned_fidelity", self.untuned_fidelity)
            .with("flat", self.flat)
    }
}

/// Target population used to rank phases: after `n_steps` from the initial
/// state when there is no environment, otherwise in the steady state.
pub fn phase_objective(cfg: &ExperimentConfig, phi: f64) -> Result<f64> {
    let params = cfg.reservoir.clone().with_phi(phi);
    let k = channel_for(cfg, &params)?;
    let rd = ReducedDynamics::from_kraus(&k, &cfg.thermal)?;
    let nbar = cfg.nbar();
    let p = cfg.thermal.p_at;
    if cfg.thermal.is_isolated() {
        let mut r = cfg.initial.build(cfg.dim)?.populations();
        for _ in 0..cfg.n_steps {
            r = renormalized(rd.step(&r, p));
        }
        Ok(r[nbar])
    } else {
        Ok(steady_state(&rd, p)?.populations[nbar])
    }
}

/// Grid search over `[0, 2 pi)` followed by golden-section refinement around
/// the best grid point. Ties go to the smallest phase.
pub fn tune_phase(cfg: &ExperimentConfig) -> Result<PhaseTuning> {
    cfg.validate()?;
    let untuned = phase_objective(cfg, cfg.reservoir.phi)?;
    if cfg.scheme == Scheme::Walther {
        return Ok(PhaseTuning { phi: 0.0, fidelity: untuned, untuned_fidelity: untuned, flat: true, grid: vec![] });
    }
    let m = cfg.phi_grid;
    let grid: Vec<(f64, f64)> = (0..m)
        .into_par_iter()
        .map(|j| {
            let phi = TAU * j as f64 / m as f64;
            phase_objective(cfg, phi).map(|f| (phi, f))
        })
        .collect::<Result<_>>()?;
    let (mut best_phi, mut best) = grid[0];
    let mut worst = grid[0].1;
    for &(phi, f) in &grid[1..] {
        if f > best {
            best = f;
            best_phi = phi;
        }
        worst = worst.min(f);
    }
    if best - worst < FLAT_TOL {
        let f0 = phase_objective(cfg, 0.0)?;
        return Ok(PhaseTuning { phi: 0.0, fidelity: f0, untuned_fidelity: untuned, flat: true, grid });
    }

    let h = TAU / m as f64;
    let (mut a, mut b) = (best_phi - h, best_phi + h);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = phase_objective(cfg, c)?;
    let mut fd = phase_objective(cfg, d)?;
    while b - a > GOLDEN_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = phase_objective(cfg, c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = phase_objective(cfg, d)?;
        }
    }
    let refined = (0.5 * (a + b)).rem_euclid(TAU);
    let f_refined = phase_objective(cfg, refined)?;
    let (phi, fidelity) = if f_refined > best { (refined, f_refined) } else { (best_phi, best) };
    Ok(PhaseTuning { phi, fidelity, untuned_fidelity: untuned, flat: false, grid })
}

/// Per-step trajectory data and run summary.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub nbar: usize,
    pub ts: f64,
    pub phi: f64,
    pub steps: Vec<usize>,
    pub fidelity: Vec<f64>,
    /// Lyapunov value, NaN when no weights exist for the configuration.
    pub v: Vec<f64>,
    /// Trace that the unnormalized evolution would retain.
    pub trace: Vec<f64>,
    pub diagonal: Vec<Vec<f64>>,
    pub completeness_defect: f64,
    pub phase: Option<PhaseTuning>,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn final_fidelity(&self) -> f64 {
        *self.fidelity.last().unwrap_or(&f64::NAN)
    }

    pub fn max_fidelity(&self) -> f64 {
        self.fidelity.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn leak(&self) -> f64 {
        1.0 - self.trace.last().unwrap_or(&1.0)
    }

    /// Recorded entry for step `k`, if it was kept.
    pub fn index_of_step(&self, k: usize) -> Option<usize> {
        self.steps.binary_search(&k).ok()
    }

    /// First recorded step with fidelity at least `level`.
    pub fn first_step_reaching(&self, level: f64) -> Option<usize> {
        self.fidelity.iter().position(|f| *f >= level).map(|i| self.steps[i])
    }

    pub fn to_report(&self) -> Report {
        let dim = self.diagonal.first().map_or(0, Vec::len);
        let mut cols = vec!["step".to_string(), "time_s".into(), "fidelity".into(), "v".into(), "trace".into()];
        cols.extend((0..dim).map(|n| format!("p{n}")));
        let mut t = Table::new(cols);
        for i in 0..self.steps.len() {
            let mut row: Vec<Cell> = vec![
                self.steps[i].into(),
                (self.steps[i] as f64 * self.ts).into(),
                self.fidelity[i].into(),
                self.v[i].into(),
                self.trace[i].into(),
            ];
            row.extend(self.diagonal[i].iter().map(|p| Cell::from(*p)));
            t.push(row);
        }
        let mut r = Report::new(t)
            .with("nbar", self.nbar)
            .with("phi", self.phi)
            .with("final_fidelity", self.final_fidelity())
            .with("max_fidelity", self.max_fidelity())
            .with("leak", self.leak())
            .with("completeness_defect", self.completeness_defect);
        if let Some(p) = &self.phase {
            r = r.with("phi_flat", p.flat).with("untuned_fidelity", p.untuned_fidelity);
        }
        r.timing.insert("wall_time_s".into(), self.wall_time_s);
        r
    }
}

fn simulate(
    cfg: &ExperimentConfig,
    k: &KrausSet,
    weights: Option<&LyapunovWeights>,
    phi: f64,
    phase: Option<PhaseTuning>,
) -> Result<RunRecord> {
    let start = Instant::now();
    let nbar = cfg.nbar();
    let mut rho = cfg.initial.build(cfg.dim)?;
    let mut rec = RunRecord {
        nbar,
        ts: cfg.thermal.ts,
        phi,
        steps: vec![],
        fidelity: vec![],
        v: vec![],
        trace: vec![],
        diagonal: vec![],
        completeness_defect: k.completeness_defect(),
        phase,
        wall_time_s: 0.0,
    };
    let mut trace = 1.0;
    let push = |rec: &mut RunRecord, step: usize, rho: &DensityMatrix, trace: f64| -> Result<()> {
        let pops = rho.populations();
        rec.steps.push(step);
        rec.fidelity.push(pops[nbar]);
        rec.v.push(match weights {
            Some(w) => evaluate_v(rho, w)?,
            None => f64::NAN,
        });
        rec.trace.push(trace);
        rec.diagonal.push(pops);
        Ok(())
    };
    push(&mut rec, 0, &rho, trace)?;
    for step in 1..=cfg.n_steps {
        let (next, report) = reservoir_step_with_report(&rho, k, &cfg.thermal)?;
        trace *= report.trace_before;
        rho = next;
        if step % cfg.record_every == 0 || step == cfg.n_steps {
            push(&mut rec, step, &rho, trace)?;
        }
    }
    rec.wall_time_s = start.elapsed().as_secs_f64();
    Ok(rec)
}

fn run_with_phase(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let mut params = cfg.reservoir.clone();
    let phase = if cfg.tune_phi && cfg.channel == ChannelKind::Numeric && cfg.scheme == Scheme::Symmetric {
        let t = tune_phase(cfg)?;
        params.phi = t.phi;
        Some(t)
    } else {
        None
    };
    let k = channel_for(cfg, &params)?;
    let weights = match cfg.scheme {
        Scheme::Symmetric => build_weights(cfg.nbar(), params.theta2, cfg.eta, cfg.dim).ok(),
        Scheme::Walther => None,
    };
    simulate(cfg, &k, weights.as_ref(), params.phi, phase)
}

/// Fidelity trajectory without environment and with an atom in every slot.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<RunRecord> {
    if !cfg.thermal.is_isolated() || cfg.thermal.p_at != 1.0 {
        return Err(Error::Config("convergence runs need kappa = 0 and p_at = 1".into()));
    }
    run_with_phase(cfg)
}

/// Full trajectory of the populations under reservoir and environment.
pub fn run_trajectory(cfg: &ExperimentConfig) -> Result<RunRecord> {
    run_with_phase(cfg)
}

/// One target photon number of the steady-state sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SteadyRow {
    pub nbar: usize,
    pub dim: usize,
    pub theta2: f64,
    pub phi: f64,
    /// First-order correction; NaN when the estimate is not applicable.
    pub x1: f64,
    /// Reduced dynamics with the ideal rates.
    pub reduced_fidelity: f64,
    /// Full map iterated to stationarity with the configured channel.
    pub simulated_fidelity: f64,
    /// Reduced dynamics built from the configured channel.
    pub channel_fidelity: f64,
    /// Largest population difference between the two previous routes.
    pub consistency: f64,
    pub stationarity_steps: usize,
    pub leak: f64,
    /// Baseline scheme after 4 s, from vacuum.
    pub walther_fidelity: f64,
    /// `(relative theta1 error, steady fidelity)`.
    pub theta1_fidelities: Vec<(f64, f64)>,
}

impl SteadyRow {
    pub fn prop2_fidelity(&self) -> f64 {
        1.0 + self.x1
    }
}

fn scaled_dim(cfg: &ExperimentConfig, nbar: usize) -> usize {
    let ratio = cfg.dim as f64 / (cfg.nbar() + 1) as f64;
    ((ratio * (nbar + 1) as f64).ceil() as usize).max(4 * nbar + 4)
}

/// Copy of `cfg` retargeted to another photon number with
/// `theta2 sqrt(nbar) = theta2_scaled`.
pub fn retarget(cfg: &ExperimentConfig, nbar: usize, theta2_scaled: f64) -> ExperimentConfig {
    let mut sub = cfg.clone();
    let mut p = ReservoirParams::experimental(nbar).with_theta2(theta2_scaled / (nbar as f64).sqrt());
    p.omega = cfg.reservoir.omega;
    p.delta_g = cfg.reservoir.delta_g;
    p.delta_m = cfg.reservoir.delta_m;
    p.ts = cfg.reservoir.ts;
    p.phi = cfg.reservoir.phi;
    p.theta1 = crate::dynamics::trapping_theta1(nbar) * cfg.reservoir.theta1 / crate::dynamics::trapping_theta1(cfg.nbar());
    sub.reservoir = p;
    sub.dim = scaled_dim(cfg, nbar);
    sub.nbars = vec![nbar];
    sub.initial = InitialState::Fock { k: 0 };
    sub
}

fn steady_row(cfg: &ExperimentConfig, nbar: usize) -> Result<SteadyRow> {
    let sub = retarget(cfg, nbar, cfg.sweep_theta2_scaled);
    let dim = sub.dim;
    let tp = sub.thermal;
    let mut params = sub.reservoir.clone();
    if sub.tune_phi && sub.channel == ChannelKind::Numeric && sub.scheme == Scheme::Symmetric {
        params.phi = tune_phase(&sub)?.phi;
    }

    let x1 = prop2_estimate(&params, &tp, tp.p_at).unwrap_or(f64::NAN);
    let reduced = steady_state(&build_reduced(&params, &tp, dim)?, tp.p_at)?;

    let k = build_channel(Scheme::Symmetric, sub.channel, &params, 0.0, dim)?;
    let channel_ss = steady_state(&ReducedDynamics::from_kraus(&k, &tp)?, tp.p_at)?;
    let st = iterate_to_stationarity(&DensityMatrix::fock(dim, nbar)?, &k, &tp, STATIONARITY_TOL, STATIONARITY_CAP)?;
    let sim = st.state.populations();
    let consistency = sim.iter().zip(&channel_ss.populations).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let walther = build_channel(Scheme::Walther, sub.channel, &params, 0.0, dim)?;
    let rd = ReducedDynamics::from_kraus(&walther, &tp)?;
    let mut r = vec![0.0; dim];
    r[0] = 1.0;
    for _ in 0..tp.steps_for(4.0) {
        r = renormalized(rd.step(&r, tp.p_at));
    }

    let theta1_fidelities = cfg
        .theta1_errors
        .iter()
        .map(|&err| {
            let k = build_channel(Scheme::Symmetric, sub.channel, &params, err, dim)?;
            let ss = steady_state(&ReducedDynamics::from_kraus(&k, &tp)?, tp.p_at)?;
            Ok((err, ss.populations[nbar]))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SteadyRow {
        nbar,
        dim,
        theta2: params.theta2,
        phi: params.phi,
        x1,
        reduced_fidelity: reduced.populations[nbar],
        simulated_fidelity: sim[nbar],
        channel_fidelity: channel_ss.populations[nbar],
        consistency,
        stationarity_steps: st.steps,
        leak: st.leak,
        walther_fidelity: r[nbar],
        theta1_fidelities,
    })
}

/// Steady-state fidelities for every configured `nbar`, in ascending order.
pub fn run_steady_sweep(cfg: &ExperimentConfig) -> Result<Vec<SteadyRow>> {
    cfg.validate()?;
    let mut nbars = cfg.nbars.clone();
    nbars.sort_unstable();
    nbars.dedup();
    nbars.par_iter().map(|&n| steady_row(cfg, n)).collect()
}

pub fn steady_report(rows: &[SteadyRow]) -> Report {
    let errs: Vec<f64> = rows.first().map(|r| r.theta1_fidelities.iter().map(|e| e.0).collect()).unwrap_or_default();
    let mut cols: Vec<String> = [
        "nbar",
        "dim",
        "theta2",
        "phi",
        "simulated_fidelity",
        "reduced_fidelity",
        "channel_fidelity",
        "prop2_fidelity",
        "x1",
        "consistency",
        "walther_fidelity_4s",
        "stationarity_steps",
        "leak",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend(errs.iter().map(|e| format!("theta1_err_{e:+}")));
    let mut t = Table::new(cols);
    for r in rows {
        let mut row: Vec<Cell> = vec![
            r.nbar.into(),
            r.dim.into(),
            r.theta2.into(),
            r.phi.into(),
            r.simulated_fidelity.into(),
            r.reduced_fidelity.into(),
            r.channel_fidelity.into(),
            r.prop2_fidelity().into(),
            r.x1.into(),
            r.consistency.into(),
            r.walther_fidelity.into(),
            r.stationarity_steps.into(),
            r.leak.into(),
        ];
        row.extend(r.theta1_fidelities.iter().map(|(_, f)| Cell::from(*f)));
        t.push(row);
    }
    Report::new(t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Theta2Row {
    pub scaled: f64,
    pub theta2: f64,
    pub valid: bool,
    /// `1 + x1`, NaN when invalid.
    pub surrogate: f64,
    /// Steady target population, NaN when invalid.
    pub verified: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Theta2Sweep {
    pub nbar: usize,
    pub best_index: usize,
    pub surrogate_best_index: Option<usize>,
    pub rows: Vec<Theta2Row>,
}

impl Theta2Sweep {
    pub fn best(&self) -> &Theta2Row {
        &self.rows[self.best_index]
    }

    pub fn to_report(&self) -> Report {
        let mut t = Table::new(["theta2_sqrt_nbar", "theta2", "valid", "prop2_fidelity", "steady_fidelity"]);
        for r in &self.rows {
            t.push(vec![r.scaled.into(), r.theta2.into(), r.valid.into(), r.surrogate.into(), r.verified.into()]);
        }
        let mut rep = Report::new(t)
            .with("nbar", self.nbar)
            .with("theta2_opt", self.best().theta2)
            .with("theta2_opt_sqrt_nbar", self.best().scaled)
            .with("fidelity_opt", self.best().verified);
        if let Some(i) = self.surrogate_best_index {
            rep = rep.with("prop2_theta2_opt_sqrt_nbar", self.rows[i].scaled);
        }
        rep
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if v.is_finite() && best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Scans `theta2 sqrt(nbar)` over the configured grid with the ideal rates,
/// ranking by the steady target population.
pub fn optimize_theta2(cfg: &ExperimentConfig) -> Result<Theta2Sweep> {
    cfg.validate()?;
    let nbar = cfg.nbar();
    let tp = cfg.thermal;
    let dim = cfg.dim.max(4 * nbar + 4);
    let rows: Vec<Theta2Row> = cfg
        .theta2_grid
        .par_iter()
        .map(|&scaled| {
            let theta2 = scaled / (nbar as f64).sqrt();
            let params = cfg.reservoir.clone().with_theta2(theta2);
            let valid = scaled > 0.0 && validate_theta2(theta2, nbar, THETA2_TOL);
            let (surrogate, verified) = if valid {
                let s = prop2_estimate(&params, &tp, tp.p_at).map(|x| 1.0 + x).unwrap_or(f64::NAN);
                let v = build_reduced(&params, &tp, dim)
                    .and_then(|rd| steady_state(&rd, tp.p_at))
                    .map(|ss| ss.populations[nbar])
                    .unwrap_or(f64::NAN);
                (s, v)
            } else {
                (f64::NAN, f64::NAN)
            };
            Theta2Row { scaled, theta2, valid, surrogate, verified }
        })
        .collect();
    let best_index = argmax(rows.iter().map(|r| r.verified))
        .ok_or_else(|| Error::InvalidParams("no valid theta2 on the grid".into()))?;
    let surrogate_best_index = argmax(rows.iter().map(|r| r.surrogate));
    Ok(Theta2Sweep { nbar, best_index, surrogate_best_index, rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustRow {
    pub case: String,
    pub p_at: f64,
    pub error: f64,
    /// Evaluation time in s, NaN for steady-state values.
    pub time_s: f64,
    pub fidelity: f64,
    pub reference: f64,
}

impl RobustRow {
    pub fn delta(&self) -> f64 {
        self.fidelity - self.reference
    }
}

pub fn robustness_report(rows: &[RobustRow]) -> Report {
    let mut t = Table::new(["case", "p_at", "error", "time_s", "fidelity", "reference", "delta"]);
    for r in rows {
        t.push(vec![
            r.case.as_str().into(),
            r.p_at.into(),
            r.error.into(),
            r.time_s.into(),
            r.fidelity.into(),
            r.reference.into(),
            r.delta().into(),
        ]);
    }
    Report::new(t)
}

/// Fidelities of the baseline under pulse-area errors without environment,
/// at 0.1 s and 0.25 s, for the configured atom presence and for `p_at = 1`.
fn walther_rows(cfg: &ExperimentConfig) -> Result<Vec<RobustRow>> {
    let nbar = cfg.nbar();
    let mut presences = vec![cfg.thermal.p_at, 1.0];
    presences.dedup();
    let mut rows = Vec::new();
    for p_at in presences {
        let tp = ThermalParams { kappa: 0.0, p_at, ..cfg.thermal };
        let (k1, k2) = (tp.steps_for(0.1), tp.steps_for(0.25));
        let run = |err: f64| -> Result<(f64, f64)> {
            let k = build_channel(Scheme::Walther, cfg.channel, &cfg.reservoir, err, cfg.dim)?;
            let mut rho = cfg.initial.build(cfg.dim)?;
            let mut at1 = f64::NAN;
            for step in 1..=k2 {
                rho = reservoir_step_with_report(&rho, &k, &tp)?.0;
                if step == k1 {
                    at1 = rho.fidelity(nbar)?;
                }
            }
            Ok((at1, rho.fidelity(nbar)?))
        };
        let reference = run(0.0)?;
        for &err in &cfg.theta1_errors {
            let (f1, f2) = run(err)?;
            for (t, f, r) in [(0.1, f1, reference.0), (0.25, f2, reference.1)] {
                rows.push(RobustRow { case: "walther_theta".into(), p_at, error: err, time_s: t, fidelity: f, reference: r });
            }
        }
    }
    Ok(rows)
}

/// Baseline fragility plus the symmetric scheme's steady fidelity under
/// `theta1` errors and `phi` offsets of `pi / 8`, with decoherence.
pub fn run_robustness(cfg: &ExperimentConfig) -> Result<Vec<RobustRow>> {
    cfg.validate()?;
    let mut rows = walther_rows(cfg)?;

    let nbar = cfg.nbar();
    let tp = cfg.thermal;
    let mut params = cfg.reservoir.clone();
    if cfg.tune_phi && cfg.channel == ChannelKind::Numeric {
        let mut sub = cfg.clone();
        sub.scheme = Scheme::Symmetric;
        sub.theta1_error = 0.0;
        params.phi = tune_phase(&sub)?.phi;
    }
    let steady = |p: &ReservoirParams, err: f64| -> Result<f64> {
        let k = build_channel(Scheme::Symmetric, cfg.channel, p, err, cfg.dim)?;
        Ok(steady_state(&ReducedDynamics::from_kraus(&k, &tp)?, tp.p_at)?.populations[nbar])
    };
    let reference = steady(&params, 0.0)?;
    for &err in &cfg.theta1_errors {
        rows.push(RobustRow {
            case: "symmetric_theta1".into(),
            p_at: tp.p_at,
            error: err,
            time_s: f64::NAN,
            fidelity: steady(&params, err)?,
            reference,
        });
    }
    for off in [-PI / 8.0, PI / 8.0] {
        let shifted = params.clone().with_phi(params.phi + off);
        rows.push(RobustRow {
            case: "symmetric_phi_offset".into(),
            p_at: tp.p_at,
            error: off,
            time_s: f64::NAN,
            fidelity: steady(&shifted, 0.0)?,
            reference,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderResult {
    pub nbar: usize,
    pub steps: usize,
    pub diagonal: Vec<f64>,
    /// Population outside `{nbar, 9 nbar + 8}`.
    pub outside: f64,
    /// Accumulated trace lost before renormalization.
    pub trace_error: f64,
}

impl LadderResult {
    pub fn to_report(&self) -> Report {
        let mut t = Table::new(["n", "population"]);
        for (n, p) in self.diagonal.iter().enumerate() {
            t.push(vec![n.into(), (*p).into()]);
        }
        Report::new(t)
            .with("nbar", self.nbar)
            .with("steps", self.steps)
            .with("outside", self.outside)
            .with("trace_error", self.trace_error)
    }
}

/// Long iteration of the ideal channel from the configured state, reporting
/// where the population ends up.
pub fn ladder_check(cfg: &ExperimentConfig) -> Result<LadderResult> {
    cfg.validate()?;
    let nbar = cfg.nbar();
    let k = analytic_kraus(&cfg.reservoir, cfg.dim)?;
    let mut rho = cfg.initial.build(cfg.dim)?;
    let mut trace_error = 0.0;
    for _ in 0..cfg.n_steps {
        let (next, rep) = apply_map_with_report(&k, &rho)?;
        trace_error += (1.0 - rep.trace_before).abs();
        rho = next;
    }
    let diagonal = rho.populations();
    let top = 9 * nbar + 8;
    let kept = diagonal[nbar] + diagonal.get(top).copied().unwrap_or(0.0);
    Ok(LadderResult { nbar, steps: cfg.n_steps, outside: (1.0 - kept).max(0.0), diagonal, trace_error })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn checks_report(rows: &[CheckRow]) -> Report {
    let mut t = Table::new(["check", "value", "tolerance", "pass"]);
    for r in rows {
        t.push(vec![r.name.as_str().into(), r.value.into(), r.tolerance.into(), r.pass.into()]);
    }
    Report::new(t).with("all_passed", rows.iter().all(|r| r.pass))
}

fn random_window_state(dim: usize, top: usize, rng: &mut ChaCha8Rng) -> Result<DensityMatrix> {
    let mut m = CMatrix::zeros(dim, dim);
    for _ in 0..rng.gen_range(1..=3) {
        let v = nalgebra::DVector::from_fn(dim, |i, _| {
            if i <= top {
                C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            } else {
                C64::new(0.0, 0.0)
            }
        });
        m += &v * v.adjoint();
    }
    let tr = m.trace().re;
    DensityMatrix::from_matrix(m.unscale(tr))
}

/// Invariant suite for the configured target photon number.
pub fn validate(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>> {
    cfg.validate()?;
    let nbar = cfg.nbar();
    let dim = cfg.dim.max(4 * nbar + 4);
    let params = &cfg.reservoir;
    let mut rows = Vec::new();
    let mut check = |name: &str, value: f64, tolerance: f64| {
        rows.push(CheckRow { name: name.into(), value, tolerance, pass: value <= tolerance });
    };

    check("theta2_resonance", if validate_theta2(params.theta2, nbar, THETA2_TOL) { 0.0 } else { 1.0 }, 0.0);

    let analytic = analytic_kraus(params, dim)?;
    check("analytic_completeness", analytic.completeness_defect(), 1e-12);
    let numeric = build_channel(Scheme::Symmetric, ChannelKind::Numeric, params, 0.0, dim)?;
    check("numeric_completeness", numeric.completeness_defect(), 1e-10);

    let target = DensityMatrix::fock(dim, nbar)?;
    let image = apply_map_raw(&analytic, target.matrix())?;
    check("analytic_fixed_point", max_abs(&(image - target.matrix())), 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    match build_weights(nbar, params.theta2, cfg.eta, dim) {
        Ok(w) => {
            let mut identity = 0.0f64;
            let mut decrease = f64::NEG_INFINITY;
            for _ in 0..20 {
                let rho = random_window_state(dim, w.top, &mut rng)?;
                let d = check_decrease(&analytic, &w, &rho)?;
                identity = identity.max((d.delta_v - d.predicted).abs());
                if rho.fidelity(nbar)? < 1.0 - 1e-9 {
                    decrease = decrease.max(d.delta_v);
                }
            }
            check("lyapunov_identity", identity, 1e-9);
            check("lyapunov_strict_decrease", decrease, 0.0);
        }
        Err(_) => check("lyapunov_weights", 1.0, 0.0),
    }

    let tp = cfg.thermal;
    let rd = build_reduced(params, &tp, dim)?;
    let pops: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
    let rho = DensityMatrix::from_populations(&pops)?;
    let full = apply_map_raw(&analytic, rho.matrix())?;
    let reduced = rd.a.apply(&rho.populations());
    let diff = (0..dim).map(|n| (full[(n, n)].re - reduced[n]).abs()).fold(0.0, f64::max);
    check("reduced_matches_channel", diff, 1e-10);

    if !tp.is_isolated() {
        let ss = steady_state(&rd, tp.p_at)?;
        check("steady_state_normalization", (ss.populations.iter().sum::<f64>() - 1.0).abs(), 1e-12);
        check("steady_state_positivity", -ss.populations.iter().cloned().fold(f64::INFINITY, f64::min), 1e-10);
        if dim <= 9 * (nbar + 1) {
            let (_, rep) = crate::thermal::decoherence_step_with_report(&DensityMatrix::fock(dim, dim - 1)?, &tp)?;
            check("thermal_leak_accounting", (1.0 - rep.trace_before - tp.gamma_plus() * dim as f64).abs(), 1e-12);
        }
    }

    let window = FockWindow::stabilized(nbar);
    let uni = DensityMatrix::uniform(dim, window)?;
    let img = apply_map_raw(&analytic, uni.matrix())?;
    let outside = (window.hi + 1..dim).map(|n| img[(n, n)].re).sum::<f64>();
    check("window_invariance", outside, 1e-12);
    Ok(rows)
}

/// Runs the experiment named by `cfg.scenario`. The flag is false when an
/// invariant check failed.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<(Report, bool)> {
    let report = match cfg.scenario.as_str() {
        "converge" => run_convergence(cfg)?.to_report(),
        "trajectory" => run_trajectory(cfg)?.to_report(),
        "steady" => steady_report(&run_steady_sweep(cfg)?),
        "tune-phase" => tune_phase(cfg)?.to_report(),
        "sweep-theta2" => optimize_theta2(cfg)?.to_report(),
        "robustness" => robustness_report(&run_robustness(cfg)?),
        "ladder" => ladder_check(cfg)?.to_report(),
        "validate" => {
            let rows = validate(cfg)?;
            let ok = rows.iter().all(|r| r.pass);
            return Ok((checks_report(&rows), ok));
        }
        other => return Err(Error::Config(format!("unknown scenario '{other}'"))),
    };
    Ok((report, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walther_channel_ignores_channel_kind() {
        let p = ReservoirParams::experimental(2);
        let a = build_channel(Scheme::Walther, ChannelKind::Analytic, &p, 0.0, 27).unwrap();
        let n = build_channel(Scheme::Walther, ChannelKind::Numeric, &p, 0.0, 27).unwrap();
        assert_eq!(a.m_g(), n.m_g());
        assert!(a.completeness_defect() < 1e-14);
    }

    #[test]
    fn analytic_phase_optimum_is_zero() {
        let mut cfg = ExperimentConfig::for_scenario("tune-phase", 2).unwrap();
        cfg.channel = ChannelKind::Analytic;
        cfg.n_steps = 300;
        let t = tune_phase(&cfg).unwrap();
        let at_zero = t.grid[0].1;
        assert!(t.grid.iter().all(|(_, f)| *f <= at_zero + 1e-12));
        assert!(t.phi.min(TAU - t.phi) < 1e-3);
    }

    #[test]
    fn flat_landscape_reports_zero() {
        let mut cfg = ExperimentConfig::for_scenario("tune-phase", 2).unwrap();
        cfg.channel = ChannelKind::Analytic;
        cfg.initial = InitialState::Fock { k: 2 };
        cfg.n_steps = 5;
        let t = tune_phase(&cfg).unwrap();
        assert!(t.flat);
        assert_eq!(t.phi, 0.0);
    }

    #[test]
    fn record_stride_keeps_last_step() {
        let mut cfg = ExperimentConfig::for_scenario("converge", 1).unwrap();
        cfg.channel = ChannelKind::Analytic;
        cfg.n_steps = 25;
        cfg.record_every = 10;
        let rec = run_convergence(&cfg).unwrap();
        assert_eq!(rec.steps, vec![0, 10, 20, 25]);
        assert_eq!(rec.index_of_step(20), Some(2));
        assert!(rec.v.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn convergence_requires_isolation() {
        let mut cfg = ExperimentConfig::for_scenario("converge", 1).unwrap();
        cfg.thermal = ThermalParams::experimental();
        assert!(matches!(run_convergence(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn retarget_scales_dimension_and_pulse() {
        let mut cfg = ExperimentConfig::for_scenario("steady", 3).unwrap();
        cfg.dim = 72;
        let sub = retarget(&cfg, 1, 0.75 * PI);
        assert_eq!(sub.dim, 36);
        assert!((sub.reservoir.theta1 - crate::dynamics::trapping_theta1(1)).abs() < 1e-15);
        assert!((sub.reservoir.theta2 - 0.75 * PI).abs() < 1e-15);
    }

    #[test]
    fn validate_passes_for_defaults() {
        for nbar in [1, 4] {
            let cfg = ExperimentConfig::for_scenario("validate", nbar).unwrap();
            let rows = validate(&cfg).unwrap();
            for r in &rows {
                assert!(r.pass, "{r:?}");
            }
        }
    }
}
