//! `nvregsim` batch front end.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::EngineKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Schema(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<nvregsim_core::Error> for CliError {
    fn from(e: nvregsim_core::Error) -> Self {
        use nvregsim_core::Error as E;
        match e {
            E::InvalidParameter(_) | E::Dimension(_) | E::InvalidState(_) | E::InconsistentAngles(_) | E::NegativeRadicand { .. } | E::PulseOverlap(_) => {
                CliError::Schema(e.to_string())
            }
            E::Degenerate { .. } | E::Fit(_) | E::Numeric(_) => CliError::Numeric(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "nvregsim", version, about = "Pulse-level NV-pair register simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by config-driven commands.
#[derive(Args, Clone)]
pub struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `run.step_density` (samples per ns).
    #[arg(long)]
    pub step_density: Option<f64>,
    /// Directory for summary.json and CSV tables; overrides `run.out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Field geometry from ODMR lines and back.
    #[command(subcommand)]
    Geometry(GeometryCmd),
    /// Pulse-sequence simulations.
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Gate calibration.
    #[command(subcommand)]
    Calibrate(CalibrateCmd),
    /// Parameter scans.
    #[command(subcommand)]
    Scan(ScanCmd),
    /// Benchmarking protocols.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Error-source attribution.
    #[command(subcommand)]
    Ablate(AblateCmd),
    /// Photon-count charge statistics.
    #[command(subcommand)]
    Charge(ChargeCmd),
    /// Optical rate model.
    #[command(subcommand)]
    Photophysics(PhotophysicsCmd),
}

#[derive(Subcommand)]
pub enum GeometryCmd {
    /// Field magnitude and tilt from a transition pair (MHz).
    Solve {
        #[arg(long)]
        nu1: f64,
        #[arg(long)]
        nu2: f64,
        #[arg(long, default_value_t = 2870.0)]
        d: f64,
        #[arg(long, default_value_t = 0.0)]
        e: f64,
        /// Azimuth reference, degrees; only matters for E ≠ 0.
        #[arg(long)]
        phi: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Transition pair from a field.
    Forward {
        /// |ωe|/2π, MHz.
        #[arg(long)]
        omega_e: f64,
        /// Degrees.
        #[arg(long)]
        theta: f64,
        #[arg(long, default_value_t = 0.0)]
        phi: f64,
        #[arg(long, default_value_t = 2870.0)]
        d: f64,
        #[arg(long, default_value_t = 0.0)]
        e: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
pub enum SimulateCmd {
    /// DEER oscillation of NV1 vs τ2, both projections.
    Deer(RunArgs),
}

#[derive(Subcommand)]
pub enum CalibrateCmd {
    /// τ2 of the √ZZ gate from a repeated-gate sweep.
    Zz(RunArgs),
}

#[derive(Subcommand)]
pub enum ScanCmd {
    /// XY8 survival of NV1 vs pulse spacing.
    Tau1(RunArgs),
    /// Riemann step-density convergence of the calibrated √ZZ gate.
    Density {
        #[command(flatten)]
        run: RunArgs,
        /// Densities to test, samples per ns.
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20")]
        densities: Vec<f64>,
        /// Reference density, samples per ns.
        #[arg(long, default_value_t = 80.0)]
        reference: f64,
    },
}

#[derive(Subcommand)]
pub enum BenchCmd {
    /// √ZZ repeated n times on the nine product inputs.
    Repetitive {
        #[command(flatten)]
        run: RunArgs,
        /// Overrides `experiment.repetitive.engine`.
        #[arg(long, value_enum)]
        engine: Option<EngineKind>,
    },
    /// Two-qubit Clifford randomized benchmarking.
    Rb {
        #[command(flatten)]
        run: RunArgs,
        /// Replace the pulse simulation by ideal Cliffords with this
        /// depolarizing strength per Clifford.
        #[arg(long)]
        depolarizing: Option<f64>,
    },
    /// Single-qubit error from stripped or bare RB.
    Rb1q {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = Rb1qMode::Stripped)]
        mode: Rb1qMode,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Rb1qMode {
    /// Two-qubit sequences with the entangling gates removed.
    Stripped,
    /// Single-qubit Cliffords on NV1.
    Nv1,
    /// Single-qubit Cliffords on NV2.
    Nv2,
}

#[derive(Subcommand)]
pub enum AblateCmd {
    /// RB decay with error sources toggled off, per Rabi frequency.
    Errors(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Objective {
    Ml,
    Ls,
}

#[derive(Subcommand)]
pub enum ChargeCmd {
    /// Three-component Poisson mixture fit of a photon histogram.
    Fit {
        /// CSV with columns n_photons,count; `#` lines are ignored.
        #[arg(long)]
        input: PathBuf,
        /// Counting window, ms.
        #[arg(long, default_value_t = 2.9)]
        window_ms: f64,
        #[arg(long, value_enum, default_value_t = Objective::Ml)]
        objective: Objective,
        /// Hold the three rates fixed (ascending, comma separated) and fit weights only.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        fixed_rates: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum RateColumnArg {
    Gupta,
    Adapted,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    GroundAndExcited,
    GroundOnly,
}

#[derive(Subcommand)]
pub enum PhotophysicsCmd {
    /// Spin initialization, SPAM error and relative contrast vs field.
    Rates {
        #[arg(long, value_enum, default_value_t = RateColumnArg::Adapted)]
        rate_column: RateColumnArg,
        /// Tilt of the misaligned NV, degrees.
        #[arg(long, default_value_t = 74.08)]
        theta: f64,
        /// Field for the SPAM estimate, G.
        #[arg(long, default_value_t = 105.33)]
        field: f64,
        #[arg(long, default_value_t = 120.0)]
        b_max: f64,
        #[arg(long, default_value_t = 5.0)]
        b_step: f64,
        #[arg(long, value_enum, default_value_t = ScopeArg::GroundAndExcited)]
        scope: ScopeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("nvregsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
