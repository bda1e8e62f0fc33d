use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fock_reservoir::harness::output::emit;
use fock_reservoir::harness::{run_scenario, ChannelKind, ExperimentConfig, OutputFormat, Scheme};
use fock_reservoir::{Error, Result};

#[derive(Parser)]
#[command(name = "fockres", version, about = "Fock-state stabilization by an engineered atomic reservoir")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fidelity from vacuum without environment
    Converge(Common),
    /// Population time series under reservoir and environment
    Trajectory(Common),
    /// Steady-state fidelities over a range of target photon numbers
    Steady(Common),
    /// Optimize the middle-segment phase
    TunePhase(Common),
    /// Scan theta2 for the best steady fidelity
    SweepTheta2(Common),
    /// Pulse-area and phase error study
    Robustness(Common),
    /// Long-time populations of the ideal channel
    Ladder(Common),
    /// Run the invariant suite
    Validate(Common),
}

impl Command {
    fn split(&self) -> (&'static str, &Common) {
        match self {
            Command::Converge(c) => ("converge", c),
            Command::Trajectory(c) => ("trajectory", c),
            Command::Steady(c) => ("steady", c),
            Command::TunePhase(c) => ("tune-phase", c),
            Command::SweepTheta2(c) => ("sweep-theta2", c),
            Command::Robustness(c) => ("robustness", c),
            Command::Ladder(c) => ("ladder", c),
            Command::Validate(c) => ("validate", c),
        }
    }
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Target photon number
    #[arg(long)]
    nbar: Option<usize>,
    /// Middle-segment pulse area, rad
    #[arg(long)]
    theta2: Option<f64>,
    /// Lyapunov weight mixing parameter in (0, 1)
    #[arg(long)]
    eta: Option<f64>,
    /// Number of Fock levels
    #[arg(long)]
    dim: Option<usize>,
    /// Number of atoms (steps)
    #[arg(long)]
    steps: Option<usize>,
    /// Cavity damping rate, 1/s
    #[arg(long)]
    kappa: Option<f64>,
    /// Thermal photon number
    #[arg(long)]
    nth: Option<f64>,
    /// Atom period, s
    #[arg(long)]
    ts: Option<f64>,
    /// Atom presence probability
    #[arg(long)]
    pat: Option<f64>,
    /// Middle-segment phase, rad (disables phase tuning)
    #[arg(long)]
    phi: Option<f64>,
    /// Relative theta1 error
    #[arg(long = "theta1-err", allow_hyphen_values = true)]
    theta1_err: Option<f64>,
    #[arg(long)]
    channel: Option<ChannelKind>,
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Keep every n-th step of a trajectory
    #[arg(long)]
    every: Option<usize>,
    /// Output file (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<OutputFormat>,
    /// JSON file with (part of) an experiment configuration
    #[arg(long)]
    config: Option<PathBuf>,
}

fn build_config(scenario: &str, c: &Common) -> Result<ExperimentConfig> {
    let overlay = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<serde_json::Value>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => serde_json::json!({}),
    };
    let file_nbar = overlay.pointer("/reservoir/nbar").and_then(|v| v.as_u64()).map(|v| v as usize);
    let nbar = c.nbar.or(file_nbar).unwrap_or(3);
    let mut cfg = ExperimentConfig::from_json_overlay(scenario, nbar, &overlay)?;

    if c.nbar.is_some() && scenario == "steady" {
        cfg.nbars = vec![nbar];
    }
    if let Some(t) = c.theta2 {
        cfg.reservoir.theta2 = t;
        cfg.sweep_theta2_scaled = t * (nbar as f64).sqrt();
    }
    if let Some(phi) = c.phi {
        cfg.reservoir.phi = phi;
        cfg.tune_phi = false;
    }
    if let Some(ts) = c.ts {
        cfg.thermal.ts = ts;
        cfg.reservoir.ts = ts;
    }
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),+ $(,)?) => {
            $(if let Some(v) = c.$flag.clone() { cfg.$($field).+ = v; })+
        };
    }
    set!(
        eta => eta,
        dim => dim,
        steps => n_steps,
        kappa => thermal.kappa,
        nth => thermal.n_th,
        pat => thermal.p_at,
        theta1_err => theta1_error,
        channel => channel,
        scheme => scheme,
        every => record_every,
        format => format,
    );
    if let Some(out) = &c.out {
        cfg.output = Some(out.clone());
    }
    cfg.validate()?;
    for w in cfg.reservoir.validate()? {
        log::warn!("{w}");
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    let (scenario, common) = cli.command.split();
    let cfg = build_config(scenario, common)?;
    log::info!("running {scenario} for nbar = {}", cfg.nbar());
    let (report, ok) = run_scenario(&cfg)?;
    emit(&cfg, &report, &mut std::io::stdout().lock())?;
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: invariant checks failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
