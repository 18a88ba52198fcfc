//! Command-line runner: argument parsing, exit-code policy and the
//! subcommands that turn core computations into report files.

mod commands;
mod parse;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use faultpath_core::Error as CoreError;

pub use parse::{parse_delta_grid, parse_fault_spec, parse_list};

#[derive(Debug, Parser)]
#[command(name = "faultpath", version, about = "Fault-path bound verification, threshold and lattice-sum reports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Measure fault-path norms and compare them with the analytic bounds.
    VerifyBounds(VerifyArgs),
    /// Threshold recursion trace and noise budgets.
    Threshold(ThresholdArgs),
    /// Lattice sums of power-law decaying couplings, written as CSV.
    DecaySum(DecayArgs),
    /// Bound verification over a grid of seeded random models.
    Sweep(SweepArgs),
    /// Norm of a fault-path sum with randomized branch phases.
    PhaseExperiment(PhaseArgs),
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Coarsest and finest micro-step counts for the Δ extrapolation.
    #[arg(long, value_name = "M0,MMAX", default_value = "64,1024")]
    pub delta_grid: String,

    /// Stop refining once the norm changes by less than this.
    #[arg(long, default_value_t = 1e-6)]
    pub delta_tolerance: f64,

    /// Compare against this multiple of the analytic bound.
    #[arg(long, default_value_t = 1.0)]
    pub bound_factor: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: PathBuf,

    /// JSON-lines report, one line per fault set.
    #[arg(long)]
    pub out: PathBuf,

    /// Fault set as `step:q` or `step:q,q` entries separated by `;`.
    /// Repeatable. Without it, every fault set up to `--max-r` is checked.
    #[arg(long = "faults", value_name = "SPEC")]
    pub faults: Vec<String>,

    #[arg(long, default_value_t = 1)]
    pub max_r: usize,

    #[command(flatten)]
    pub oracle: OracleArgs,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long)]
    pub out: PathBuf,

    /// Named gadget parameters.
    #[arg(long, default_value = "paper-magnitude")]
    pub preset: String,

    /// Override the number of locations per gadget.
    #[arg(long)]
    pub a: Option<u64>,
    /// Override the number of tolerated faults.
    #[arg(long)]
    pub t: Option<u64>,
    /// Override the combinatorial prefactor constant.
    #[arg(long)]
    pub c: Option<f64>,

    /// Physical noise strength (default: the threshold itself).
    #[arg(long)]
    pub epsilon: Option<f64>,

    #[arg(long, default_value_t = 10)]
    pub max_level: u32,

    /// Ideal circuit size; adds the level and blow-up needed for it.
    #[arg(long)]
    pub circuit_size: Option<u64>,

    /// Lattice dimension for the coupling-amplitude budget.
    #[arg(long, requires = "decay_z")]
    pub decay_dim: Option<u32>,
    /// Decay exponent for the coupling-amplitude budget.
    #[arg(long, requires = "decay_dim")]
    pub decay_z: Option<f64>,

    #[arg(long, default_value = "euclidean")]
    pub metric: String,

    #[arg(long, default_value_t = 1.0)]
    pub t0: f64,
}

#[derive(Debug, Args)]
pub struct DecayArgs {
    #[arg(long)]
    pub out: PathBuf,

    /// Comma-separated lattice dimensions.
    #[arg(long, default_value = "1")]
    pub dims: String,

    /// Comma-separated decay exponents.
    #[arg(long, default_value = "2")]
    pub zs: String,

    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,

    /// Finite radius; omitted means the infinite lattice.
    #[arg(long)]
    pub radius: Option<u64>,

    #[arg(long, default_value = "euclidean")]
    pub metric: String,

    #[arg(long, default_value_t = 1e-9)]
    pub rel_tol: f64,

    #[arg(long, default_value_t = 100_000_000)]
    pub max_sites: u64,

    /// Site budget for growth fits of divergent cells.
    #[arg(long, default_value_t = 4_000_000)]
    pub fit_max_sites: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub out: PathBuf,

    /// Number of models per strength, seeded `seed, seed+1, ...`.
    #[arg(long, default_value_t = 20)]
    pub models: u64,

    /// Comma-separated noise strengths (η or ε).
    #[arg(long, default_value = "0.05")]
    pub strengths: String,

    #[arg(long, default_value_t = 3)]
    pub n_qubits: usize,

    #[arg(long, default_value_t = 2)]
    pub bath_dim: usize,

    #[arg(long, default_value_t = 2)]
    pub n_steps: usize,

    /// `long-range` or `short-range`.
    #[arg(long, default_value = "long-range")]
    pub mode: String,

    #[arg(long, default_value_t = 3)]
    pub max_r: usize,

    #[command(flatten)]
    pub oracle: OracleArgs,
}

#[derive(Debug, Args)]
pub struct PhaseArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    /// A single fault set, same syntax as for `verify-bounds`.
    #[arg(long = "faults", value_name = "SPEC")]
    pub faults: String,

    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,

    /// Micro-steps per time step for the branch operators.
    #[arg(long, default_value_t = 256)]
    pub m: usize,
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Model(String),
    Guard(String),
    Violation(String),
    Other(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Model(_) => 3,
            Failure::Guard(_) => 4,
            Failure::Violation(_) => 5,
            Failure::Other(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Model(m) | Failure::Guard(m) | Failure::Violation(m) | Failure::Other(m) => m,
        }
    }

    /// Errors raised while loading a model.
    pub(crate) fn from_model(e: CoreError) -> Self {
        match e {
            CoreError::ResourceGuard(_) => Failure::Guard(e.to_string()),
            _ => Failure::Model(e.to_string()),
        }
    }

    /// Errors raised while interpreting command-line values.
    pub(crate) fn from_config(e: CoreError) -> Self {
        match e {
            CoreError::ResourceGuard(_) => Failure::Guard(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }

    /// Errors raised during computation.
    pub(crate) fn from_run(e: CoreError) -> Self {
        match e {
            CoreError::ResourceGuard(_) => Failure::Guard(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

pub type Outcome = Result<(), Failure>;

/// Runs one parsed command; the summary goes to stdout.
pub fn run(cli: &Cli) -> Outcome {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Failure::Config("--workers must be at least 1".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| Failure::Other(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::VerifyBounds(a) => commands::verify_bounds(a),
        Command::Threshold(a) => commands::threshold(a),
        Command::DecaySum(a) => commands::decay_sum(a),
        Command::Sweep(a) => commands::sweep(a, cli.seed),
        Command::PhaseExperiment(a) => commands::phase_experiment(a, cli.seed),
    })
}

/// Parses `args` and runs, mapping the outcome to an exit status.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
