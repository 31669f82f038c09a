//! JSON configuration schema for runs and sweeps.
//!
//! Configurations are strict: unknown keys are rejected everywhere, a
//! `schema` version field is mandatory at the top level, and every numeric
//! default is spelled out here rather than scattered through the commands.
//!
//! Complex numbers are written as two-element arrays `[re, im]`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::Deserialize;

use fuelcell_core::cluster::{make_named_state, ClusterState, NamedState};
use fuelcell_core::dynamics::{EvolutionConfig, EvolutionMethod};
use fuelcell_core::generator::MaserParams;
use fuelcell_core::C64;

use crate::error::CliError;

/// Configuration format version accepted by this binary.
pub const SCHEMA_VERSION: u32 = 1;

/// Hard ceiling on sweep grid sizes unless `allow_large_grid` is set.
pub const GRID_LIMIT: usize = 1_000_000;

/// A complex number in `[re, im]` form.
#[derive(Debug, Clone, Copy, Deserialize)]
pub struct ComplexPair(pub f64, pub f64);

impl From<ComplexPair> for C64 {
    fn from(p: ComplexPair) -> Self {
        C64::new(p.0, p.1)
    }
}

// ---------------------------------------------------------------------------
// Run configuration (classify / coeffs / evolve)
// ---------------------------------------------------------------------------

/// Top-level configuration for the state-centric commands.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Must equal [`SCHEMA_VERSION`].
    pub schema: u32,
    /// The cluster state fed to the machine.
    pub state: StateSpec,
    /// Machine parameters; defaults to `g = 1`, `tau = 0.05`, `p = 1`.
    #[serde(default)]
    pub maser: MaserSpec,
    /// Evolution controls; only `evolve` reads these.
    #[serde(default)]
    pub evolution: EvolutionSpec,
}

/// How the cluster state is specified.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    /// A state from the named catalog.
    Named(NamedSpec),
    /// A pure state given by its amplitudes in the ordered basis
    /// (most significant atom first, `e` before `g`).
    Amplitudes {
        n_atoms: usize,
        values: Vec<ComplexPair>,
    },
    /// A density matrix given row by row in the ordered basis. Slightly
    /// non-Hermitian input is symmetrized; the adjustment size is logged.
    Matrix {
        n_atoms: usize,
        values: Vec<Vec<ComplexPair>>,
    },
}

/// Named catalog states. Unit entries are written as plain strings
/// (`"w_symmetric"`), parameterized ones as single-key objects
/// (`{"two_atom_squeeze": {"theta": 0.3}}`).
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NamedSpec {
    TwoAtomSqueeze { theta: f64 },
    WGeneral { theta: f64, psi: f64, phi: f64, delta: f64 },
    WSymmetric,
    GhzGeneral { theta: f64 },
    GhzSymmetric,
    EState,
    WeMixture { epsilon: f64 },
    Ground { n_atoms: usize },
    Excited { n_atoms: usize },
}

impl From<NamedSpec> for NamedState {
    fn from(spec: NamedSpec) -> Self {
        match spec {
            NamedSpec::TwoAtomSqueeze { theta } => NamedState::TwoAtomSqueeze { theta },
            NamedSpec::WGeneral {
                theta,
                psi,
                phi,
                delta,
            } => NamedState::WGeneral {
                theta,
                psi,
                phi,
                delta,
            },
            NamedSpec::WSymmetric => NamedState::WSymmetric,
            NamedSpec::GhzGeneral { theta } => NamedState::GhzGeneral { theta },
            NamedSpec::GhzSymmetric => NamedState::GhzSymmetric,
            NamedSpec::EState => NamedState::EState,
            NamedSpec::WeMixture { epsilon } => NamedState::WeMixture { epsilon },
            NamedSpec::Ground { n_atoms } => NamedState::Ground { n_atoms },
            NamedSpec::Excited { n_atoms } => NamedState::Excited { n_atoms },
        }
    }
}

impl StateSpec {
    /// Builds the cluster state, mapping validation failures to diagnostics.
    pub fn build(&self) -> Result<ClusterState, CliError> {
        match self {
            StateSpec::Named(spec) => {
                make_named_state((*spec).into()).map_err(|e| CliError::from(e).with_field("state"))
            }
            StateSpec::Amplitudes { n_atoms, values } => {
                let amps: Vec<C64> = values.iter().map(|&v| v.into()).collect();
                ClusterState::from_pure(*n_atoms, &amps)
                    .map_err(|e| CliError::from(e).with_field("state.amplitudes"))
            }
            StateSpec::Matrix { n_atoms, values } => {
                let n = values.len();
                for (r, row) in values.iter().enumerate() {
                    if row.len() != n {
                        return Err(CliError::config_invalid(
                            format!("matrix row {r} has {} entries, expected {n}", row.len()),
                            "state.matrix.values",
                        ));
                    }
                }
                let matrix =
                    Array2::from_shape_fn((n, n), |(i, j)| C64::from(values[i][j]));
                let (state, adjustment) = ClusterState::from_matrix(*n_atoms, matrix)
                    .map_err(|e| CliError::from(e).with_field("state.matrix"))?;
                if adjustment > 1e-12 {
                    log::warn!(
                        "input matrix was not Hermitian (deviation {adjustment:.3e}); \
                         symmetrized to (M + M†)/2"
                    );
                }
                Ok(state)
            }
        }
    }
}

/// Machine parameters.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaserSpec {
    /// Coupling rate.
    #[serde(default = "default_g")]
    pub g: f64,
    /// Transit time; `g·tau` is the kick strength.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Mean cluster arrival rate.
    #[serde(default = "default_p")]
    pub p: f64,
}

fn default_g() -> f64 {
    1.0
}
fn default_tau() -> f64 {
    0.05
}
fn default_p() -> f64 {
    1.0
}

impl Default for MaserSpec {
    fn default() -> Self {
        Self {
            g: default_g(),
            tau: default_tau(),
            p: default_p(),
        }
    }
}

impl MaserSpec {
    pub fn params(&self) -> Result<MaserParams, CliError> {
        MaserParams::new(self.g, self.tau, self.p)
            .map_err(|e| CliError::from(e).with_field("maser"))
    }
}

/// Integration method names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    OdeRk4,
    ExpmStep,
    MonteCarlo,
}

impl From<MethodSpec> for EvolutionMethod {
    fn from(m: MethodSpec) -> Self {
        match m {
            MethodSpec::OdeRk4 => EvolutionMethod::OdeRk4,
            MethodSpec::ExpmStep => EvolutionMethod::ExpmStep,
            MethodSpec::MonteCarlo => EvolutionMethod::MonteCarlo,
        }
    }
}

/// Evolution controls for the `evolve` command.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSpec {
    /// Integrator / sampler.
    #[serde(default = "default_method")]
    pub method: MethodSpec,
    /// Step (and sampling grid) size.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Evolution horizon.
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Fock-space truncation (includes the guard band).
    #[serde(default = "default_fock_dim")]
    pub fock_dim: usize,
    /// Monte Carlo arrival-stream seed.
    #[serde(default)]
    pub seed: u64,
    /// Record observables every this many steps.
    #[serde(default = "default_sample_stride")]
    pub sample_stride: usize,
    /// Guard-band occupation that aborts the run.
    #[serde(default = "default_leak_tol")]
    pub leak_tol: f64,
}

fn default_method() -> MethodSpec {
    MethodSpec::OdeRk4
}
fn default_dt() -> f64 {
    0.1
}
fn default_t_max() -> f64 {
    1000.0
}
fn default_fock_dim() -> usize {
    100
}
fn default_sample_stride() -> usize {
    1
}
fn default_leak_tol() -> f64 {
    1e-6
}

impl Default for EvolutionSpec {
    fn default() -> Self {
        Self {
            method: default_method(),
            dt: default_dt(),
            t_max: default_t_max(),
            fock_dim: default_fock_dim(),
            seed: 0,
            sample_stride: default_sample_stride(),
            leak_tol: default_leak_tol(),
        }
    }
}

impl EvolutionSpec {
    /// Assembles the evolution config, honoring a command-line seed override.
    pub fn config(&self, seed_override: Option<u64>) -> Result<EvolutionConfig, CliError> {
        let cfg = EvolutionConfig::new(self.dt, self.t_max)
            .map_err(|e| CliError::from(e).with_field("evolution"))?
            .with_method(self.method.into())
            .with_seed(seed_override.unwrap_or(self.seed))
            .with_sample_stride(self.sample_stride)
            .with_leak_tol(self.leak_tol);
        cfg.validate()
            .map_err(|e| CliError::from(e).with_field("evolution"))?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Sweep configuration
// ---------------------------------------------------------------------------

/// Built-in sweep grids reproducing the library's reference calculations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    /// Steady photon number of the single-excitation three-atom family
    /// over its two weight angles.
    Fig6,
    /// Squeezing parameter of the two-atom superposition fuel versus its
    /// mixing angle.
    Fig7,
    /// Steady photon number of the two-branch three-atom family versus its
    /// mixing angle, with divergence flags.
    Fig8,
}

impl PresetName {
    pub fn file_stem(&self) -> &'static str {
        match self {
            PresetName::Fig6 => "fig6",
            PresetName::Fig7 => "fig7",
            PresetName::Fig8 => "fig8",
        }
    }
}

/// Sweep configuration file: either a preset or a custom grid.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Must equal [`SCHEMA_VERSION`].
    pub schema: u32,
    /// One of the built-in grids.
    #[serde(default)]
    pub preset: Option<PresetName>,
    /// A custom grid over a named quantity.
    #[serde(default)]
    pub custom: Option<CustomSweep>,
}

/// Quantities a custom sweep can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantityName {
    /// Steady photon number of the single-excitation three-atom family;
    /// parameters `theta`, `psi`, `phi`, `delta` (all default 0).
    WPhotonNumber,
    /// Steady photon number of the two-branch three-atom family;
    /// parameter `theta`.
    GhzPhotonNumber,
    /// Squeezing parameter of the two-atom superposition fuel;
    /// parameter `theta`.
    SqueezeParameter,
}

impl QuantityName {
    pub fn label(&self) -> &'static str {
        match self {
            QuantityName::WPhotonNumber => "w_photon_number",
            QuantityName::GhzPhotonNumber => "ghz_photon_number",
            QuantityName::SqueezeParameter => "squeeze_parameter",
        }
    }

    /// Parameter names the quantity understands.
    pub fn parameters(&self) -> &'static [&'static str] {
        match self {
            QuantityName::WPhotonNumber => &["theta", "psi", "phi", "delta"],
            QuantityName::GhzPhotonNumber => &["theta"],
            QuantityName::SqueezeParameter => &["theta"],
        }
    }
}

/// A custom sweep: a rectangular grid over one or more axes, remaining
/// parameters held fixed.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSweep {
    pub quantity: QuantityName,
    pub axes: Vec<AxisSpec>,
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    /// Permits grids beyond [`GRID_LIMIT`] points.
    #[serde(default)]
    pub allow_large_grid: bool,
}

/// One sweep axis: `count` evenly spaced values from `start` to `stop`
/// inclusive (a single-point axis sits at `start`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub name: String,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn value(&self, i: usize) -> f64 {
        if self.count <= 1 {
            self.start
        } else {
            self.start + (self.stop - self.start) * i as f64 / (self.count - 1) as f64
        }
    }
}

impl CustomSweep {
    /// Rejects axis/fixed names the quantity does not understand, duplicate
    /// names, empty or oversized grids. `allow_large_cli` is the command-line
    /// override equivalent to the `allow_large_grid` key.
    pub fn validate(&self, allow_large_cli: bool) -> Result<(), CliError> {
        let allowed = self.quantity.parameters();
        if self.axes.is_empty() {
            return Err(CliError::config_invalid(
                "custom sweep needs at least one axis",
                "custom.axes",
            ));
        }
        let mut seen: Vec<&str> = Vec::new();
        for (k, axis) in self.axes.iter().enumerate() {
            let field = format!("custom.axes[{k}].name");
            if !allowed.contains(&axis.name.as_str()) {
                return Err(CliError::config_invalid(
                    format!(
                        "axis '{}' is not a parameter of {} (expected one of {:?})",
                        axis.name,
                        self.quantity.label(),
                        allowed
                    ),
                    field,
                ));
            }
            if seen.contains(&axis.name.as_str()) {
                return Err(CliError::config_invalid(
                    format!("axis '{}' appears twice", axis.name),
                    field,
                ));
            }
            if axis.count == 0 {
                return Err(CliError::config_invalid(
                    format!("axis '{}' has count 0", axis.name),
                    format!("custom.axes[{k}].count"),
                ));
            }
            if !(axis.start.is_finite() && axis.stop.is_finite()) {
                return Err(CliError::config_invalid(
                    format!("axis '{}' endpoints must be finite", axis.name),
                    format!("custom.axes[{k}]"),
                ));
            }
            seen.push(&axis.name);
        }
        for name in self.fixed.keys() {
            if !allowed.contains(&name.as_str()) {
                return Err(CliError::config_invalid(
                    format!(
                        "fixed parameter '{name}' is not a parameter of {}",
                        self.quantity.label()
                    ),
                    format!("custom.fixed.{name}"),
                ));
            }
            if seen.contains(&name.as_str()) {
                return Err(CliError::config_invalid(
                    format!("'{name}' is both an axis and a fixed parameter"),
                    format!("custom.fixed.{name}"),
                ));
            }
        }
        let points = self.grid_size();
        if points == 0 {
            return Err(CliError::config_invalid("empty grid", "custom.axes"));
        }
        if points > GRID_LIMIT && !(self.allow_large_grid || allow_large_cli) {
            return Err(CliError::new(
                "grid_too_large",
                format!(
                    "grid has {points} points (limit {GRID_LIMIT}); set \
                     allow_large_grid to proceed"
                ),
            )
            .with_field("custom.axes"));
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.axes
            .iter()
            .map(|a| a.count)
            .fold(1usize, |acc, c| acc.saturating_mul(c))
    }
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn check_schema(schema: u32) -> Result<(), CliError> {
    if schema != SCHEMA_VERSION {
        return Err(CliError::config_invalid(
            format!("schema version {schema} not supported (expected {SCHEMA_VERSION})"),
            "schema",
        ));
    }
    Ok(())
}

/// Loads and checks a run configuration.
pub fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = read_to_string(path)?;
    let cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| CliError::config_parse(path, e))?;
    check_schema(cfg.schema)?;
    Ok(cfg)
}

/// Loads a sweep configuration, checking the schema version and that exactly
/// one of `preset`/`custom` is present. Grid-level validation happens in the
/// sweep command, where the command-line large-grid override is known.
pub fn load_sweep_config(path: &Path) -> Result<SweepConfig, CliError> {
    let text = read_to_string(path)?;
    let cfg: SweepConfig =
        serde_json::from_str(&text).map_err(|e| CliError::config_parse(path, e))?;
    check_schema(cfg.schema)?;
    match (&cfg.preset, &cfg.custom) {
        (None, None) => Err(CliError::config_invalid(
            "sweep needs either a preset or a custom grid",
            "preset",
        )),
        (Some(_), Some(_)) => Err(CliError::config_invalid(
            "preset and custom are mutually exclusive",
            "preset",
        )),
        _ => Ok(cfg),
    }
}
