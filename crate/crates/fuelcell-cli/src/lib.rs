//! Command-line front end for the cluster-fuelled micromaser numerics.
//!
//! The `fuelcell` binary exposes five subcommands:
//!
//! * `classify` — label every cluster-matrix entry by its dynamical role;
//! * `coeffs` — extract the fuel coefficients two independent ways and
//!   report the analytics they feed;
//! * `evolve` — integrate the cavity field and record observables as CSV;
//! * `sweep` — evaluate a closed-form quantity over a parameter grid
//!   (three presets, or custom grids from a config file);
//! * `validate` — run the built-in cross-validation suite.
//!
//! Conventions shared by all commands:
//!
//! * configuration is strict JSON (unknown keys rejected, `schema` field
//!   mandatory) — see [`config`];
//! * numeric CSV cells carry 17 significant digits and round-trip `f64`
//!   exactly; outputs are byte-deterministic for a given configuration;
//! * every run writes a `status.json` sidecar describing how it ended;
//! * operational errors print one JSON diagnostic line on stderr and exit
//!   with status 1; a run that completes but *disagrees with itself*
//!   (coefficient cross-check, validation suite) exits with status 2.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub mod classify;
pub mod coeffs;
pub mod config;
pub mod error;
pub mod evolve;
pub mod report;
pub mod sweep;
pub mod validate;

use config::{load_run_config, PresetName, RunConfig};
use error::CliError;

/// Machine analysis of cluster-state fuel for a single-mode maser.
#[derive(Debug, Parser)]
#[command(name = "fuelcell", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Directory for output artifacts.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,

    /// Override the configured random seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Override the configured Fock truncation.
    #[arg(long, global = true, value_name = "N")]
    pub fock_dim: Option<usize>,

    /// Worker threads for parallel commands (falls back to the
    /// FUELCELL_JOBS environment variable, then to all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label every cluster-matrix entry by its dynamical role.
    Classify,
    /// Extract fuel coefficients two ways and report the analytics they feed.
    Coeffs,
    /// Integrate the cavity field from vacuum and record observables.
    Evolve,
    /// Evaluate a quantity over a parameter grid.
    Sweep {
        /// Built-in grid (alternative to --config).
        #[arg(long, value_enum)]
        preset: Option<PresetName>,
        /// Permit custom grids beyond the built-in point limit.
        #[arg(long)]
        allow_large_grid: bool,
    },
    /// Run the built-in cross-validation suite.
    Validate,
}

/// How a command ended when it did not error out.
pub enum Outcome {
    /// Everything agreed; exit status 0.
    Clean,
    /// The command ran to completion but a consistency check failed;
    /// exit status 2.
    CheckFailed,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        match self {
            Outcome::Clean => 0,
            Outcome::CheckFailed => 2,
        }
    }
}

/// The flags shared by every subcommand, with borrowed paths.
pub struct CommonArgs<'a> {
    pub config: Option<&'a Path>,
    pub out: &'a Path,
    pub seed: Option<u64>,
    pub fock_dim: Option<usize>,
}

impl CommonArgs<'_> {
    /// The configuration path, required by the state-centric commands.
    pub fn config_path(&self) -> Result<&Path, CliError> {
        self.config
            .ok_or_else(|| CliError::new("usage", "this command needs --config"))
    }

    /// Loads the run configuration behind `--config`.
    pub fn load_run_config(&self) -> Result<RunConfig, CliError> {
        load_run_config(self.config_path()?)
    }
}

/// Resolves the worker-thread count: flag, then FUELCELL_JOBS, then default.
fn resolve_jobs(cli: &Cli) -> Result<Option<usize>, CliError> {
    if cli.jobs.is_some() {
        return Ok(cli.jobs);
    }
    match std::env::var("FUELCELL_JOBS") {
        Ok(text) => {
            let n: usize = text.trim().parse().map_err(|_| {
                CliError::new(
                    "usage",
                    format!("FUELCELL_JOBS must be a positive integer, got '{text}'"),
                )
            })?;
            if n == 0 {
                return Err(CliError::new("usage", "FUELCELL_JOBS must be positive"));
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

/// Dispatches a parsed command line. Thread-pool setup happens here so that
/// every parallel command sees the same `--jobs` semantics.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    if let Some(n) = resolve_jobs(cli)? {
        // A second build_global in the same process (tests) is harmless; the
        // first pool wins.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let args = CommonArgs {
        config: cli.config.as_deref(),
        out: &cli.out,
        seed: cli.seed,
        fock_dim: cli.fock_dim,
    };
    match &cli.command {
        Command::Classify => classify::run(&args),
        Command::Coeffs => coeffs::run(&args),
        Command::Evolve => evolve::run(&args),
        Command::Sweep {
            preset,
            allow_large_grid,
        } => sweep::run(&args, *preset, *allow_large_grid),
        Command::Validate => validate::run(&args),
    }
}
