use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::ReservoirParams;
use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, FockWindow};
use crate::thermal::ThermalParams;

/// How the Kraus operators are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// Closed-form large-detuning operators.
    Analytic,
    /// Exact three-level propagator followed by extraction.
    Numeric,
}

/// Which reservoir is simulated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Three-segment interaction with the Stark-shift switch.
    Symmetric,
    /// Resonant two-level trapping baseline.
    Walther,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

macro_rules! text_enum {
    ($ty:ident { $($name:literal => $variant:ident),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(format!("unknown value '{s}', expected one of: {}", [$($name),+].join(", "))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name,)+ })
            }
        }
    };
}

text_enum!(ChannelKind { "analytic" => Analytic, "numeric" => Numeric });
text_enum!(Scheme { "symmetric" => Symmetric, "walther" => Walther });
text_enum!(OutputFormat { "csv" => Csv, "json" => Json });

/// Starting field state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    Fock { k: usize },
    Uniform { lo: usize, hi: usize },
    Diagonal { populations: Vec<f64> },
}

impl InitialState {
    pub fn build(&self, dim: usize) -> Result<DensityMatrix> {
        match self {
            InitialState::Fock { k } => DensityMatrix::fock(dim, *k),
            InitialState::Uniform { lo, hi } => DensityMatrix::uniform(dim, FockWindow::new(*lo, *hi)?),
            InitialState::Diagonal { populations } => {
                if populations.len() != dim {
                    return Err(Error::DimensionMismatch { left: dim, right: populations.len() });
                }
                DensityMatrix::from_populations(populations)
            }
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        match self {
            InitialState::Fock { k } if *k >= dim => {
                Err(Error::Config(format!("initial Fock index {k} must be below dim = {dim}")))
            }
            InitialState::Uniform { lo, hi } if lo > hi || *hi >= dim => {
                Err(Error::Config(format!("initial window [{lo}, {hi}] must fit in 0..{dim}")))
            }
            InitialState::Diagonal { populations } if populations.len() != dim => Err(Error::Config(format!(
                "initial populations have length {}, expected dim = {dim}",
                populations.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// Everything an experiment needs. Missing fields in a JSON file fall back to
/// the defaults of [`ExperimentConfig::for_scenario`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub reservoir: ReservoirParams,
    pub thermal: ThermalParams,
    pub dim: usize,
    pub n_steps: usize,
    pub eta: f64,
    pub channel: ChannelKind,
    pub scheme: Scheme,
    pub initial: InitialState,
    /// Relative error on `theta1` (or on the resonant pulse area for the
    /// baseline scheme).
    pub theta1_error: f64,
    /// Optimize `phi` before running with the numeric channel.
    pub tune_phi: bool,
    /// Keep every `record_every`-th step of a trajectory (the last step is
    /// always kept).
    pub record_every: usize,
    /// Target photon numbers covered by the steady-state sweep.
    pub nbars: Vec<usize>,
    /// `theta2 sqrt(nbar)` used by the steady-state sweep.
    pub sweep_theta2_scaled: f64,
    /// `theta2 sqrt(nbar)` values scanned by the theta2 optimization.
    pub theta2_grid: Vec<f64>,
    /// Number of grid points of the phase search on `[0, 2 pi)`.
    pub phi_grid: usize,
    /// Relative `theta1` errors for the robustness study.
    pub theta1_errors: Vec<f64>,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
}

pub const SCENARIOS: [&str; 8] =
    ["converge", "trajectory", "steady", "tune-phase", "sweep-theta2", "robustness", "ladder", "validate"];

/// `theta2 sqrt(nbar)` at which decoherence scenarios run by default.
pub const DEFAULT_THETA2_SCALED: f64 = 0.75 * PI;

/// Midpoints of 64 equal cells of `(0, pi)`.
pub fn default_theta2_grid() -> Vec<f64> {
    (0..64).map(|j| PI * (j as f64 + 0.5) / 64.0).collect()
}

impl ExperimentConfig {
    pub fn for_scenario(scenario: &str, nbar: usize) -> Result<Self> {
        if !SCENARIOS.contains(&scenario) {
            return Err(Error::Config(format!("unknown scenario '{scenario}'")));
        }
        if nbar < 1 {
            return Err(Error::Config("nbar must be at least 1".into()));
        }
        let scaled = |x: f64| x / (nbar as f64).sqrt();
        let mut cfg = Self {
            scenario: scenario.to_string(),
            reservoir: ReservoirParams::experimental(nbar).with_theta2(scaled(DEFAULT_THETA2_SCALED)),
            thermal: ThermalParams::experimental(),
            dim: 9 * (nbar + 1),
            n_steps: 2000,
            eta: crate::lyapunov::DEFAULT_ETA,
            channel: ChannelKind::Numeric,
            scheme: Scheme::Symmetric,
            initial: InitialState::Fock { k: 0 },
            theta1_error: 0.0,
            tune_phi: true,
            record_every: 1,
            nbars: vec![nbar],
            sweep_theta2_scaled: DEFAULT_THETA2_SCALED,
            theta2_grid: default_theta2_grid(),
            phi_grid: 64,
            theta1_errors: vec![-0.02, 0.02],
            output: None,
            format: OutputFormat::Csv,
        };
        match scenario {
            "converge" | "tune-phase" => {
                cfg.reservoir.theta2 = scaled(1.0);
                cfg.thermal = ThermalParams::none();
            }
            "trajectory" => {
                cfg.n_steps = cfg.thermal.steps_for(4.0);
            }
            "steady" => {
                cfg.nbars = (1..=8).collect();
            }
            "robustness" => {
                cfg.initial = InitialState::Fock { k: nbar };
            }
            "ladder" => {
                cfg.reservoir.theta2 = scaled(1.0);
                cfg.thermal = ThermalParams::none();
                cfg.channel = ChannelKind::Analytic;
                cfg.n_steps = 20000;
                cfg.initial = InitialState::Fock { k: 4 * nbar + 3 };
            }
            _ => {}
        }
        Ok(cfg)
    }

    /// Scenario defaults, overlaid with a (possibly partial) JSON object.
    pub fn from_json_overlay(scenario: &str, nbar: usize, overlay: &serde_json::Value) -> Result<Self> {
        let base = serde_json::to_value(Self::for_scenario(scenario, nbar)?)?;
        let merged = merge_json(base, overlay.clone());
        serde_json::from_value(merged).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn nbar(&self) -> usize {
        self.reservoir.nbar
    }

    /// Checks the structural invariants; numerical validity is left to the
    /// experiments themselves.
    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 1 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if self.record_every < 1 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if self.dim < self.nbar() + 2 {
            return Err(Error::Config(format!("dim = {} must be at least nbar + 2", self.dim)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta = {} must lie in (0, 1)", self.eta)));
        }
        if !self.theta1_error.is_finite() || self.theta1_error <= -1.0 {
            return Err(Error::Config(format!("theta1 error {} must exceed -1", self.theta1_error)));
        }
        self.initial.check(self.dim)?;
        let needs = |name: &str, empty: bool| {
            if empty {
                Err(Error::Config(format!("scenario '{}' needs a non-empty {name}", self.scenario)))
            } else {
                Ok(())
            }
        };
        match self.scenario.as_str() {
            "steady" => needs("nbars list", self.nbars.is_empty())?,
            "sweep-theta2" => needs("theta2 grid", self.theta2_grid.is_empty())?,
            "tune-phase" => needs("phi grid", self.phi_grid == 0)?,
            "robustness" => needs("theta1 error list", self.theta1_errors.is_empty())?,
            _ => {}
        }
        if self.nbars.contains(&0) {
            return Err(Error::Config("every swept nbar must be at least 1".into()));
        }
        self.thermal.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.reservoir.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

fn merge_json(base: serde_json::Value, overlay: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match (base, overlay) {
        (Value::Object(mut b), Value::Object(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(old) => merge_json(old, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            Value::Object(b)
        }
        (_, o) => o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_defaults_are_valid() {
        for s in SCENARIOS {
            for nbar in [1, 3, 8] {
                let cfg = ExperimentConfig::for_scenario(s, nbar).unwrap();
                cfg.validate().unwrap();
            }
        }
        assert!(matches!(ExperimentConfig::for_scenario("nope", 3), Err(Error::Config(_))));
    }

    #[test]
    fn overlay_keeps_unspecified_fields() {
        let overlay = serde_json::json!({ "n_steps": 17, "thermal": { "kappa": 2.0 } });
        let cfg = ExperimentConfig::from_json_overlay("trajectory", 3, &overlay).unwrap();
        assert_eq!(cfg.n_steps, 17);
        assert_eq!(cfg.thermal.kappa, 2.0);
        assert_eq!(cfg.thermal.n_th, 0.05);
        assert_eq!(cfg.dim, 36);
    }

    #[test]
    fn bad_configs_rejected() {
        let mut cfg = ExperimentConfig::for_scenario("converge", 2).unwrap();
        cfg.initial = InitialState::Fock { k: cfg.dim };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::for_scenario("sweep-theta2", 2).unwrap();
        cfg.theta2_grid.clear();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::for_scenario("converge", 2).unwrap();
        cfg.n_steps = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let overlay = serde_json::json!({ "channel": "fancy" });
        assert!(matches!(
            ExperimentConfig::from_json_overlay("converge", 2, &overlay),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn enums_round_trip_through_text() {
        for c in [ChannelKind::Analytic, ChannelKind::Numeric] {
            assert_eq!(c.to_string().parse::<ChannelKind>().unwrap(), c);
        }
        for s in [Scheme::Symmetric, Scheme::Walther] {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert!("xml".parse::<OutputFormat>().is_err());
    }
}
