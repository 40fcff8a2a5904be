mod commands;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fqh_core::Error;

/// Energies are in the units of the model matrices; flow time is in inverse
/// energy units.
#[derive(Parser, Debug)]
#[command(name = "fqh", version, about = "N-diagonalize fermionic quadratic Hamiltonians by an elliptic operator flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Report invariant residuals and the admissibility conditions of a model
    Check(CheckArgs),
    /// Run the flow on a model file, or on every *.json file in a directory
    Diagonalize(DiagonalizeArgs),
    /// Write the model of one BCS fiber {k, -k}
    Bcs(BcsArgs),
    /// Write a random admissible model
    Random(RandomArgs),
    /// Check a result file against independent oracles
    Verify(VerifyArgs),
    /// Run the flow and write only the trace CSV
    Trace(TraceArgs),
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        Ok(x) => Err(format!("must be positive and finite, got {x}")),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.is_finite() => Ok(x),
        Ok(x) => Err(format!("must be non-negative and finite, got {x}")),
        Err(e) => Err(e.to_string()),
    }
}

fn finite(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        Ok(x) => Err(format!("must be finite, got {x}")),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Args, Debug, Clone)]
struct ConditionArgs {
    /// Spectral shift μ (energy). Pins μ instead of searching for the largest
    /// feasible positive value; the only way to use a negative μ
    #[arg(long, value_name = "ENERGY", value_parser = finite, allow_negative_numbers = true)]
    mu: Option<f64>,

    /// Margin ε > 0 (energy) paired with --mu
    /// [default: min(μ + λ_min(Υ₀), μ)/2]
    #[arg(long, value_name = "ENERGY", value_parser = positive, requires = "mu")]
    eps: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum MethodArg {
    /// Adaptive Dormand-Prince 5(4)
    Dp,
    /// Fixed-step exponential splitting, for stiff models
    Splitting,
}

#[derive(Args, Debug, Clone)]
struct FlowArgs {
    /// Stop once the Hilbert-Schmidt norm of D_t (energy) falls to this value
    #[arg(long, value_name = "ENERGY", default_value = "1e-12", value_parser = positive)]
    d_tol: f64,

    /// Flow-time horizon (1/energy)
    /// [default: 1000/max(|μ|, 0.01), or 1000 when no μ is available]
    #[arg(long, value_name = "TIME", value_parser = positive)]
    t_max: Option<f64>,

    /// Relative local error per step (dimensionless)
    #[arg(long, value_name = "REL", default_value = "1e-10", value_parser = positive)]
    rel_err: f64,

    /// Absolute local error per step (energy)
    #[arg(long, value_name = "ABS", default_value = "1e-13", value_parser = positive)]
    abs_err: f64,

    /// Record a trace sample every this many accepted steps
    #[arg(long, value_name = "STEPS", default_value_t = 1)]
    trace_every: usize,

    /// Upper bound on the step size (1/energy) [default: none]
    #[arg(long, value_name = "TIME", value_parser = positive)]
    max_step: Option<f64>,

    /// Abort with an integrator failure after this many accepted steps
    #[arg(long, value_name = "STEPS", default_value_t = 2_000_000)]
    max_steps: usize,

    /// Time stepper
    #[arg(long, value_enum, default_value_t = MethodArg::Dp)]
    method: MethodArg,

    /// Step size (1/energy) for --method splitting
    #[arg(long, value_name = "TIME", default_value = "1e-3", value_parser = positive)]
    split_step: f64,

    /// Integrate without evaluating the admissibility conditions at all
    #[arg(long, conflicts_with = "mu")]
    skip_conditions: bool,

    #[command(flatten)]
    conditions: ConditionArgs,
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// Model JSON file
    model: PathBuf,

    #[command(flatten)]
    conditions: ConditionArgs,
}

#[derive(Args, Debug)]
struct DiagonalizeArgs {
    /// Model JSON file, or a directory of them (batch mode; FQH_THREADS caps
    /// the worker count)
    input: PathBuf,

    /// Result JSON file; in batch mode, a directory receiving one result per
    /// model under the same file name
    #[arg(short, long, value_name = "PATH")]
    output: Option<PathBuf>,

    /// Trace CSV file (t,d_hs_norm,invariant_drift,energy_integral,zeta); in
    /// batch mode, a directory receiving <model stem>.csv
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,

    #[command(flatten)]
    flow: FlowArgs,
}

#[derive(Args, Debug)]
struct TraceArgs {
    /// Model JSON file
    model: PathBuf,

    /// Trace CSV file
    #[arg(short, long, value_name = "PATH")]
    output: PathBuf,

    #[command(flatten)]
    flow: FlowArgs,
}

#[derive(Args, Debug)]
struct BcsArgs {
    /// Kinetic energy ε_k ≥ 0 (energy)
    #[arg(long, value_name = "ENERGY", value_parser = non_negative)]
    epsilon: f64,

    /// Chemical potential κ (energy)
    #[arg(long, value_name = "ENERGY", value_parser = finite, allow_negative_numbers = true)]
    kappa: f64,

    /// Coupling γ > 0 (energy)
    #[arg(long, value_name = "ENERGY", value_parser = positive)]
    gamma: f64,

    /// Order parameter c as "re,im" (dimensionless)
    #[arg(long, value_name = "RE,IM", allow_hyphen_values = true)]
    c: String,

    /// Share of γ|Λ||c|² carried by this fiber's constant E₀ (dimensionless)
    #[arg(long, value_name = "FACTOR", default_value_t = 1.0, value_parser = finite)]
    volume_factor: f64,

    /// Model JSON file [default: print the model to stdout]
    #[arg(short, long, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RandomArgs {
    /// Number of modes
    #[arg(long, value_name = "N")]
    dim: usize,

    /// Seed of the SplitMix64 stream
    #[arg(long, value_name = "SEED", default_value_t = 0)]
    seed: u64,

    /// Lower bound α on the spectrum of Υ₀ (energy)
    #[arg(long, value_name = "ENERGY", default_value_t = 1.0, value_parser = positive)]
    gap: f64,

    /// Hilbert-Schmidt norm of D₀ in units of the gap (dimensionless)
    #[arg(long, value_name = "RATIO", default_value_t = 0.5, value_parser = non_negative)]
    d_scale: f64,

    /// Model JSON file [default: print the model to stdout]
    #[arg(short, long, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Result JSON file
    result: PathBuf,

    /// Model JSON file the result was computed from
    model: PathBuf,

    /// Run the Fock-space checks only for models with at most this many modes
    /// (at most 12; relative bounds need at most 10)
    #[arg(long, value_name = "N", default_value_t = 8, value_parser = clap::value_parser!(u8).range(0..=12))]
    fock_modes: u8,
}

/// Process exit code for a library error.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Parse(_) | Error::DimensionMismatch { .. } | Error::DimTooLarge { .. } => 1,
        Error::NotConverged { .. } | Error::IntegratorFailure(_) | Error::StepTooLarge { .. } => 2,
        Error::InvariantViolation { .. }
        | Error::NotPsd { .. }
        | Error::SingularShift { .. }
        | Error::NoFeasibleMu { .. }
        | Error::NotCommuting { .. }
        | Error::ZeroMode { .. } => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (name, outcome) = match cli.command {
        Command::Check(a) => ("check", commands::check(&a)),
        Command::Diagonalize(a) => ("diagonalize", commands::diagonalize(&a)),
        Command::Bcs(a) => ("bcs", commands::bcs(&a)),
        Command::Random(a) => ("random", commands::random(&a)),
        Command::Verify(a) => ("verify", verify::run(&a)),
        Command::Trace(a) => ("trace", commands::trace(&a)),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("fqh {name}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
