//! Cavity-field states and their time evolution.
//!
//! The field side of the machine lives here: density-matrix containers with
//! moment extraction ([`FieldState`], [`MomentState`]), deterministic
//! Lindblad integration, stochastic injection Monte Carlo with exact kicks,
//! steady-state solving, and the closed-form moment flow. The generator
//! being integrated is built in [`crate::generator`].

use crate::cluster::ClusterState;
use crate::generator::{
    cluster_eigendecomposition, FuelCoefficients, Liouvillian, MaserParams,
};
use crate::hilbert::{FockSpace, HilbertError, PropagatorBlocks};
use crate::linalg::{self, LinalgError, Lu};
use crate::C64;
use ndarray::{Array1, Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

/// Default tolerance for Hermiticity and trace checks on field states.
pub const FIELD_TOL: f64 = 1e-10;

/// Errors produced by field-state construction and evolution.
#[derive(Debug, Error)]
pub enum DynamicsError {
    /// Matrix shape does not match the Fock-space dimension.
    #[error("field matrix is {found}×{found}, Fock space has dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    /// Hermiticity, trace, or positivity check failed.
    #[error("invalid field state: {0}")]
    InvalidState(String),
    /// A parameter lies outside its allowed range.
    #[error("parameter {name} = {value} outside allowed range {range}")]
    ParameterOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    /// The generator admits no normalizable stationary state.
    #[error("no steady state: {0}")]
    NoSteadyState(String),
    /// The configured method does not apply to the called operation.
    #[error("evolution method {method} is not available in {operation}")]
    MethodMismatch {
        method: &'static str,
        operation: &'static str,
    },
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// First and second moments of the field: `⟨a⟩`, `⟨a²⟩`, `⟨n⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentState {
    pub mean_a: C64,
    pub mean_a2: C64,
    pub mean_n: f64,
}

impl MomentState {
    /// Moments of the vacuum.
    pub fn zero() -> Self {
        Self {
            mean_a: C64::new(0.0, 0.0),
            mean_a2: C64::new(0.0, 0.0),
            mean_n: 0.0,
        }
    }

    /// `⟨n⟩ − |⟨a⟩|²`, nonnegative for any physical state.
    pub fn cauchy_schwarz_deficit(&self) -> f64 {
        self.mean_n - self.mean_a.norm_sqr()
    }

    /// Whether the moments could come from a physical state, within `tol`.
    pub fn is_physical(&self, tol: f64) -> bool {
        self.mean_n >= -tol && self.cauchy_schwarz_deficit() >= -tol
    }
}

/// Density matrix of the truncated cavity mode.
#[derive(Debug, Clone)]
pub struct FieldState {
    fock: FockSpace,
    matrix: Array2<C64>,
}

impl FieldState {
    /// Wraps a density matrix, requiring Hermiticity and unit trace within
    /// [`FIELD_TOL`].
    pub fn new(fock: FockSpace, matrix: Array2<C64>) -> Result<Self, DynamicsError> {
        Self::with_tolerance(fock, matrix, FIELD_TOL)
    }

    /// Wraps a density matrix with a caller-chosen tolerance; perturbative
    /// maps (accurate only to some order in a small parameter) produce
    /// states that are valid only to that order.
    pub fn with_tolerance(
        fock: FockSpace,
        matrix: Array2<C64>,
        tol: f64,
    ) -> Result<Self, DynamicsError> {
        let dim = fock.dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(DynamicsError::DimensionMismatch {
                expected: dim,
                found: matrix.nrows(),
            });
        }
        let herm = linalg::hermiticity_deviation(&matrix.view());
        if herm > tol {
            return Err(DynamicsError::InvalidState(format!(
                "Hermiticity deviation {herm:.3e} exceeds {tol:.3e}"
            )));
        }
        let trace: C64 = (0..dim).map(|p| matrix[[p, p]]).sum();
        let tdev = (trace - C64::new(1.0, 0.0)).norm();
        if tdev > tol {
            return Err(DynamicsError::InvalidState(format!(
                "trace deviates from one by {tdev:.3e} (tolerance {tol:.3e})"
            )));
        }
        Ok(Self { fock, matrix })
    }

    /// The vacuum state `|0⟩⟨0|`.
    pub fn vacuum(fock: FockSpace) -> Self {
        let mut matrix = Array2::zeros((fock.dim(), fock.dim()));
        matrix[[0, 0]] = C64::new(1.0, 0.0);
        Self { fock, matrix }
    }

    /// Diagonal state with the given nonnegative weights, normalized to
    /// unit trace.
    pub fn from_weights(fock: FockSpace, weights: &[f64]) -> Result<Self, DynamicsError> {
        let dim = fock.dim();
        if weights.len() != dim {
            return Err(DynamicsError::DimensionMismatch {
                expected: dim,
                found: weights.len(),
            });
        }
        if let Some(&w) = weights.iter().find(|w| **w < 0.0 || !w.is_finite()) {
            return Err(DynamicsError::ParameterOutOfRange {
                name: "weights",
                value: w,
                range: "finite and ≥ 0",
            });
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(DynamicsError::ParameterOutOfRange {
                name: "weight sum",
                value: total,
                range: "> 0",
            });
        }
        let mut matrix = Array2::zeros((dim, dim));
        for (p, &w) in weights.iter().enumerate() {
            matrix[[p, p]] = C64::new(w / total, 0.0);
        }
        Ok(Self { fock, matrix })
    }

    /// Thermal (geometric) state with mean occupation `nbar`, renormalized
    /// on the truncated ladder.
    pub fn thermal(fock: FockSpace, nbar: f64) -> Result<Self, DynamicsError> {
        if !(nbar >= 0.0) || !nbar.is_finite() {
            return Err(DynamicsError::ParameterOutOfRange {
                name: "nbar",
                value: nbar,
                range: "finite and ≥ 0",
            });
        }
        let ratio = nbar / (nbar + 1.0);
        let weights: Vec<f64> = (0..fock.dim()).map(|p| ratio.powi(p as i32)).collect();
        Self::from_weights(fock, &weights)
    }

    /// Fock space the state lives on.
    pub fn fock(&self) -> FockSpace {
        self.fock
    }

    /// The density matrix.
    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    /// Consumes the state and returns the bare matrix.
    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    /// `⟨a⟩ = Σ_p √(p+1) ρ[p+1, p]`.
    pub fn mean_a(&self) -> C64 {
        raw_mean_a(&self.matrix)
    }

    /// `⟨a²⟩ = Σ_p √((p+1)(p+2)) ρ[p+2, p]`.
    pub fn mean_a2(&self) -> C64 {
        raw_mean_a2(&self.matrix)
    }

    /// Mean photon number `⟨n⟩`.
    pub fn mean_n(&self) -> f64 {
        raw_mean_n(&self.matrix)
    }

    /// Purity `tr ρ²` (Frobenius norm squared for Hermitian `ρ`).
    pub fn purity(&self) -> f64 {
        raw_purity(&self.matrix)
    }

    /// Population inside the guard band, the truncation-error monitor.
    pub fn leakage(&self) -> f64 {
        raw_leakage(&self.matrix, self.fock.guard_start())
    }

    /// All tracked moments at once.
    pub fn moments(&self) -> MomentState {
        MomentState {
            mean_a: self.mean_a(),
            mean_a2: self.mean_a2(),
            mean_n: self.mean_n(),
        }
    }

    /// Opt-in positivity check: smallest eigenvalue must be ≥ `−tol`.
    pub fn validate_positivity(&self, tol: f64) -> Result<(), DynamicsError> {
        let evals = linalg::eigvalsh(&self.matrix.view(), 1e-6)?;
        let min = evals.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -tol {
            return Err(DynamicsError::InvalidState(format!(
                "negative eigenvalue {min:.3e} beyond tolerance {tol:.3e}"
            )));
        }
        Ok(())
    }
}

fn raw_mean_a(m: &Array2<C64>) -> C64 {
    let dim = m.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for p in 0..dim.saturating_sub(1) {
        acc += ((p + 1) as f64).sqrt() * m[[p + 1, p]];
    }
    acc
}

fn raw_mean_a2(m: &Array2<C64>) -> C64 {
    let dim = m.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for p in 0..dim.saturating_sub(2) {
        acc += (((p + 1) * (p + 2)) as f64).sqrt() * m[[p + 2, p]];
    }
    acc
}

fn raw_mean_n(m: &Array2<C64>) -> f64 {
    (0..m.nrows()).map(|p| p as f64 * m[[p, p]].re).sum()
}

fn raw_purity(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

fn raw_leakage(m: &Array2<C64>, guard_start: usize) -> f64 {
    (guard_start..m.nrows()).map(|p| m[[p, p]].re).sum()
}

// ---------------------------------------------------------------------------
// Evolution configuration and trajectory records
// ---------------------------------------------------------------------------

/// Integration scheme used by the evolution operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvolutionMethod {
    /// Classic fourth-order Runge–Kutta directly on the density matrix.
    OdeRk4,
    /// One dense `exp(𝓛·dt)` propagator applied repeatedly; exact per step
    /// but limited to small dimensions.
    ExpmStep,
    /// Stochastic transit arrivals with exact kicks.
    MonteCarlo,
}

impl EvolutionMethod {
    fn name(self) -> &'static str {
        match self {
            EvolutionMethod::OdeRk4 => "ode_rk4",
            EvolutionMethod::ExpmStep => "expm_step",
            EvolutionMethod::MonteCarlo => "monte_carlo",
        }
    }
}

/// Knobs for a single evolution run.
#[derive(Debug, Clone, Copy)]
pub struct EvolutionConfig {
    /// Integration step for the deterministic methods; also the sampling
    /// resolution of the recorded trajectory.
    pub dt: f64,
    /// Time horizon.
    pub t_max: f64,
    pub method: EvolutionMethod,
    /// Seed of the per-trajectory random stream (Monte Carlo only).
    pub seed: u64,
    /// Guard-band population at which a run is aborted.
    pub leak_tol: f64,
    /// Observables are recorded every `sample_stride` steps.
    pub sample_stride: usize,
}

impl EvolutionConfig {
    /// Default guard-band population budget.
    pub const DEFAULT_LEAK_TOL: f64 = 1e-6;

    /// Config with the given step and horizon; method `OdeRk4`, seed 0,
    /// leak budget [`EvolutionConfig::DEFAULT_LEAK_TOL`], every step
    /// sampled.
    pub fn new(dt: f64, t_max: f64) -> Result<Self, DynamicsError> {
        let cfg = Self {
            dt,
            t_max,
            method: EvolutionMethod::OdeRk4,
            seed: 0,
            leak_tol: Self::DEFAULT_LEAK_TOL,
            sample_stride: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_method(mut self, method: EvolutionMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_leak_tol(mut self, leak_tol: f64) -> Self {
        self.leak_tol = leak_tol;
        self
    }

    pub fn with_sample_stride(mut self, sample_stride: usize) -> Self {
        self.sample_stride = sample_stride;
        self
    }

    /// Checks every field. The evolution operations call this on entry, so
    /// a hand-assembled config gets the same scrutiny as a built one.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(DynamicsError::ParameterOutOfRange {
                name: "dt",
                value: self.dt,
                range: "finite and > 0",
            });
        }
        if !self.t_max.is_finite() || self.t_max < 0.0 {
            return Err(DynamicsError::ParameterOutOfRange {
                name: "t_max",
                value: self.t_max,
                range: "finite and ≥ 0",
            });
        }
        if !self.leak_tol.is_finite() || self.leak_tol <= 0.0 {
            return Err(DynamicsError::ParameterOutOfRange {
                name: "leak_tol",
                value: self.leak_tol,
                range: "finite and > 0",
            });
        }
        if self.sample_stride == 0 {
            return Err(DynamicsError::ParameterOutOfRange {
                name: "sample_stride",
                value: 0.0,
                range: "≥ 1",
            });
        }
        Ok(())
    }
}

/// How an evolution run ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryStatus {
    /// Ran to `t_max`.
    Completed,
    /// The guard-band population crossed the configured budget; recorded
    /// samples stop at the abort time.
    LeakageAborted { t: f64, leakage: f64 },
}

/// Sampled observables of one evolution run.
///
/// All record vectors share indexing: entry `k` belongs to `times[k]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub mean_a: Vec<C64>,
    pub mean_a2: Vec<C64>,
    pub mean_n: Vec<f64>,
    pub purity: Vec<f64>,
    pub leakage: Vec<f64>,
    pub status: TrajectoryStatus,
    /// Monte Carlo only: number of arrival gaps shorter than the transit
    /// time τ, where the one-cluster-at-a-time picture is strained (the
    /// overlap is warned about, not modeled).
    pub overlap_warnings: usize,
    final_state: FieldState,
}

impl Trajectory {
    fn start(initial: &FieldState) -> Self {
        let mut tr = Self {
            times: Vec::new(),
            mean_a: Vec::new(),
            mean_a2: Vec::new(),
            mean_n: Vec::new(),
            purity: Vec::new(),
            leakage: Vec::new(),
            status: TrajectoryStatus::Completed,
            overlap_warnings: 0,
            final_state: initial.clone(),
        };
        tr.record(0.0, initial.matrix(), initial.fock().guard_start());
        tr
    }

    fn record(&mut self, t: f64, matrix: &Array2<C64>, guard_start: usize) {
        self.times.push(t);
        self.mean_a.push(raw_mean_a(matrix));
        self.mean_a2.push(raw_mean_a2(matrix));
        self.mean_n.push(raw_mean_n(matrix));
        self.purity.push(raw_purity(matrix));
        self.leakage.push(raw_leakage(matrix, guard_start));
    }

    /// Number of recorded samples.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Field state at the last recorded time.
    pub fn final_state(&self) -> &FieldState {
        &self.final_state
    }

    /// Moments of sample `k`.
    pub fn moments_at(&self, k: usize) -> MomentState {
        MomentState {
            mean_a: self.mean_a[k],
            mean_a2: self.mean_a2[k],
            mean_n: self.mean_n[k],
        }
    }

    /// Average of `⟨n⟩` over the samples with `t ≥ from_time`; with the
    /// regular sampling grid this is a time average. `None` when no sample
    /// qualifies.
    pub fn time_averaged_mean_n(&self, from_time: f64) -> Option<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (t, n) in self.times.iter().zip(&self.mean_n) {
            if *t >= from_time {
                total += n;
                count += 1;
            }
        }
        (count > 0).then(|| total / count as f64)
    }
}

// ---------------------------------------------------------------------------
// Deterministic master-equation evolution
// ---------------------------------------------------------------------------

/// Largest Fock dimension accepted by the `ExpmStep` method; the dense
/// propagator is `dim² × dim²`.
pub const EXPM_DIM_MAX: usize = 24;

/// Stability bound for `ode_rk4`: `dt · ‖𝓛‖` must stay below this.
const RK4_STEP_BOUND: f64 = 0.1;

/// Integrates `ρ̇ = 𝓛ρ` over `config.t_max`, recording observables every
/// `sample_stride` steps (the final point is always recorded).
///
/// `OdeRk4` steps the density matrix with the banded elementwise
/// application, refusing configs with `dt·‖𝓛‖ ≥ 0.1`; `ExpmStep` builds
/// the dense `exp(𝓛·dt)` once (dimension capped at [`EXPM_DIM_MAX`]) and
/// is exact per step. The guard band is watched after every step; crossing
/// `config.leak_tol` ends the run early with
/// [`TrajectoryStatus::LeakageAborted`] and the partial record.
pub fn evolve_master(
    initial: &FieldState,
    gen: &Liouvillian,
    config: &EvolutionConfig,
) -> Result<Trajectory, DynamicsError> {
    config.validate()?;
    let fock = initial.fock();
    if fock.dim() != gen.fock().dim() {
        return Err(DynamicsError::DimensionMismatch {
            expected: gen.fock().dim(),
            found: fock.dim(),
        });
    }
    let dim = fock.dim();
    let guard = fock.guard_start();
    let dt = config.dt;

    // Step plan: full steps of dt plus one shortened tail step to land
    // exactly on t_max.
    let n_full = (config.t_max / dt).floor() as usize;
    let tail = config.t_max - n_full as f64 * dt;
    let has_tail = tail > 1e-12 * dt;
    let total_steps = n_full + usize::from(has_tail);

    enum Stepper {
        Rk4 {
            k1: Array2<C64>,
            k2: Array2<C64>,
            k3: Array2<C64>,
            k4: Array2<C64>,
            stage: Array2<C64>,
        },
        Expm {
            u_main: Array2<C64>,
            u_tail: Option<Array2<C64>>,
        },
    }

    let mut stepper = match config.method {
        EvolutionMethod::OdeRk4 => {
            let product = dt * gen.norm_estimate();
            if product >= RK4_STEP_BOUND {
                return Err(DynamicsError::ParameterOutOfRange {
                    name: "dt",
                    value: product,
                    range: "dt·‖𝓛‖ < 0.1 for the ode_rk4 method",
                });
            }
            Stepper::Rk4 {
                k1: Array2::zeros((dim, dim)),
                k2: Array2::zeros((dim, dim)),
                k3: Array2::zeros((dim, dim)),
                k4: Array2::zeros((dim, dim)),
                stage: Array2::zeros((dim, dim)),
            }
        }
        EvolutionMethod::ExpmStep => {
            if dim > EXPM_DIM_MAX {
                return Err(DynamicsError::ParameterOutOfRange {
                    name: "fock dim",
                    value: dim as f64,
                    range: "≤ 24 for the expm_step method",
                });
            }
            let sup = gen.superoperator();
            let u_main = linalg::expm(&sup.mapv(|z| z * dt).view());
            let u_tail =
                has_tail.then(|| linalg::expm(&sup.mapv(|z| z * tail).view()));
            Stepper::Expm { u_main, u_tail }
        }
        EvolutionMethod::MonteCarlo => {
            return Err(DynamicsError::MethodMismatch {
                method: config.method.name(),
                operation: "evolve_master",
            })
        }
    };

    let mut rho = initial.matrix().clone();
    let mut traj = Trajectory::start(initial);
    for step in 1..=total_steps {
        let last = step == total_steps;
        let h = if step <= n_full { dt } else { tail };
        match &mut stepper {
            Stepper::Rk4 {
                k1,
                k2,
                k3,
                k4,
                stage,
            } => {
                gen.apply_into(&rho.view(), k1);
                Zip::from(&mut *stage).and(&rho).and(&*k1).for_each(|s, &r, &k| {
                    *s = r + 0.5 * h * k;
                });
                gen.apply_into(&stage.view(), k2);
                Zip::from(&mut *stage).and(&rho).and(&*k2).for_each(|s, &r, &k| {
                    *s = r + 0.5 * h * k;
                });
                gen.apply_into(&stage.view(), k3);
                Zip::from(&mut *stage).and(&rho).and(&*k3).for_each(|s, &r, &k| {
                    *s = r + h * k;
                });
                gen.apply_into(&stage.view(), k4);
                Zip::from(&mut rho)
                    .and(&*k1)
                    .and(&*k2)
                    .and(&*k3)
                    .and(&*k4)
                    .for_each(|r, &a, &b, &c, &d| {
                        *r += (h / 6.0) * (a + 2.0 * (b + c) + d);
                    });
            }
            Stepper::Expm { u_main, u_tail } => {
                let u = if step <= n_full {
                    &*u_main
                } else {
                    u_tail.as_ref().expect("tail propagator exists")
                };
                let flat = Array1::from_iter(rho.iter().copied());
                let next = u.dot(&flat);
                rho = Array2::from_shape_vec((dim, dim), next.to_vec())
                    .expect("propagated state has dim² entries");
            }
        }
        let t = if last {
            config.t_max
        } else {
            step as f64 * dt
        };
        let leak = raw_leakage(&rho, guard);
        if leak > config.leak_tol {
            traj.record(t, &rho, guard);
            traj.status = TrajectoryStatus::LeakageAborted { t, leakage: leak };
            break;
        }
        if step % config.sample_stride == 0 || last {
            traj.record(t, &rho, guard);
        }
    }
    let span = traj.times.last().copied().unwrap_or(0.0);
    traj.final_state = FieldState::with_tolerance(fock, rho, FIELD_TOL * (1.0 + span))?;
    Ok(traj)
}

// ---------------------------------------------------------------------------
// Stochastic injection Monte Carlo
// ---------------------------------------------------------------------------

/// Evolves the field through a Poisson stream of cluster transits.
///
/// Arrival gaps are exponential with rate `p`; each arrival applies the
/// exact (unitary-per-manifold) kick, instantaneous on the field timescale;
/// between arrivals nothing happens — the cavity is lossless. Gaps shorter
/// than the transit time τ are counted in
/// [`Trajectory::overlap_warnings`]. Runs are reproducible given
/// `config.seed`; observables are sampled on the grid
/// `dt · sample_stride`. Requires `config.method == MonteCarlo`.
pub fn evolve_monte_carlo(
    initial: &FieldState,
    cluster: &ClusterState,
    params: &MaserParams,
    config: &EvolutionConfig,
) -> Result<Trajectory, DynamicsError> {
    config.validate()?;
    if config.method != EvolutionMethod::MonteCarlo {
        return Err(DynamicsError::MethodMismatch {
            method: config.method.name(),
            operation: "evolve_monte_carlo",
        });
    }
    let fock = initial.fock();
    let guard = fock.guard_start();
    if params.p * params.tau >= 1.0 {
        log::warn!(
            "p·τ = {} ≥ 1: clusters overlap in the cavity on average; the \
             one-at-a-time transit picture does not hold",
            params.p * params.tau
        );
    }
    let blocks = PropagatorBlocks::exact(cluster.n_atoms(), fock, params.g_tau())?;
    let eig = cluster_eigendecomposition(cluster).map_err(|e| {
        DynamicsError::InvalidState(format!("cluster state could not be eigendecomposed: {e}"))
    })?;
    let kick = blocks.kraus_set(&eig)?;

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let p = params.p;
    // Inversion sampling of the exponential gap; 1−u ∈ (0,1] keeps the log
    // finite.
    let draw_gap = move |rng: &mut ChaCha12Rng| -> f64 { -(1.0 - rng.random::<f64>()).ln() / p };
    let mut next_arrival = if p > 0.0 {
        draw_gap(&mut rng)
    } else {
        f64::INFINITY
    };

    let sample_dt = config.dt * config.sample_stride as f64;
    let n_samples = (config.t_max / sample_dt).floor() as usize;
    let mut sample_times: Vec<f64> = (1..=n_samples).map(|k| k as f64 * sample_dt).collect();
    let needs_final = sample_times
        .last()
        .map_or(config.t_max > 0.0, |&t| config.t_max - t > 1e-12 * sample_dt);
    if needs_final {
        sample_times.push(config.t_max);
    }

    let mut rho = initial.matrix().clone();
    let mut traj = Trajectory::start(initial);
    'grid: for &t_sample in &sample_times {
        while next_arrival <= t_sample {
            rho = kick.apply(&rho);
            let leak = raw_leakage(&rho, guard);
            if leak > config.leak_tol {
                traj.record(next_arrival, &rho, guard);
                traj.status = TrajectoryStatus::LeakageAborted {
                    t: next_arrival,
                    leakage: leak,
                };
                break 'grid;
            }
            let gap = draw_gap(&mut rng);
            if gap < params.tau {
                traj.overlap_warnings += 1;
            }
            next_arrival += gap;
        }
        if matches!(traj.status, TrajectoryStatus::Completed) {
            traj.record(t_sample, &rho, guard);
        }
    }
    let span = traj.times.last().copied().unwrap_or(0.0);
    traj.final_state = FieldState::with_tolerance(fock, rho, FIELD_TOL * (1.0 + span))?;
    Ok(traj)
}

// ---------------------------------------------------------------------------
// Steady state
// ---------------------------------------------------------------------------

/// Pivot-ratio floor below which the block elimination is declared
/// degenerate.
const STEADY_PIVOT_TOL: f64 = 1e-13;
/// Acceptable `‖𝓛ρ‖ / ‖𝓛‖` for a verified steady state.
const STEADY_RESIDUAL_TOL: f64 = 1e-8;
/// Eigenvalue floor for the positivity verification of the solution.
const STEADY_POSITIVITY_TOL: f64 = 1e-7;

/// Where each diagonal offset `m − n` of the density matrix lives in the
/// solved block chain.
struct OffsetLayout {
    dim: usize,
    /// Offsets of each solved group, ascending.
    groups: Vec<Vec<isize>>,
    /// `offset + (dim−1)` → (group, base column inside that group).
    place: Vec<Option<(usize, usize)>>,
    sizes: Vec<usize>,
    trace_group: usize,
    trace_row: usize,
}

impl OffsetLayout {
    fn new(dim: usize, lambda_on: bool, xi_on: bool) -> Self {
        let top = dim as isize - 1;
        let groups: Vec<Vec<isize>> = if !lambda_on && !xi_on {
            // Offsets decouple entirely; only the main diagonal can carry
            // a normalized state.
            vec![vec![0]]
        } else if lambda_on && xi_on {
            // Couplings reach offsets ±2; pairing consecutive offsets
            // makes the chain tridiagonal in the pairs.
            (-top..=top)
                .collect::<Vec<_>>()
                .chunks(2)
                .map(|c| c.to_vec())
                .collect()
        } else if lambda_on {
            // Drive couples neighboring offsets only.
            (-top..=top).map(|o| vec![o]).collect()
        } else {
            // Pair pump couples offsets two apart; the odd sector decouples
            // and holds no part of the stationary state.
            (-top..=top)
                .filter(|o| o.rem_euclid(2) == 0)
                .map(|o| vec![o])
                .collect()
        };
        let mut place = vec![None; 2 * dim - 1];
        let mut sizes = Vec::with_capacity(groups.len());
        for (g, group) in groups.iter().enumerate() {
            let mut base = 0usize;
            for &o in group {
                place[(o + top) as usize] = Some((g, base));
                base += dim - o.unsigned_abs();
            }
            sizes.push(base);
        }
        let (trace_group, trace_base) =
            place[top as usize].expect("offset 0 is always part of the layout");
        Self {
            dim,
            groups,
            place,
            sizes,
            trace_group,
            trace_row: trace_base,
        }
    }

    /// Group and column of element `(m, n)`; `None` when its offset is not
    /// part of the solved sector.
    fn locate(&self, m: usize, n: usize) -> Option<(usize, usize)> {
        let o = m as isize - n as isize;
        let (g, base) = self.place[(o + self.dim as isize - 1) as usize]?;
        Some((g, base + m.min(n)))
    }
}

/// Block-tridiagonal system over the offset groups: `diag[g]` couples a
/// group to itself, `upper[g]` its equations to group `g+1` unknowns,
/// `lower[g]` group `g+1` equations to group `g` unknowns.
struct BlockChain {
    diag: Vec<Array2<C64>>,
    upper: Vec<Array2<C64>>,
    lower: Vec<Array2<C64>>,
    rhs: Vec<Array1<C64>>,
}

fn assemble_block_chain(gen: &Liouvillian, layout: &OffsetLayout) -> BlockChain {
    let dim = layout.dim;
    let g_count = layout.groups.len();
    let zero = C64::new(0.0, 0.0);
    let mut diag: Vec<Array2<C64>> = layout
        .sizes
        .iter()
        .map(|&s| Array2::zeros((s, s)))
        .collect();
    let mut upper: Vec<Array2<C64>> = (0..g_count.saturating_sub(1))
        .map(|g| Array2::zeros((layout.sizes[g], layout.sizes[g + 1])))
        .collect();
    let mut lower: Vec<Array2<C64>> = (0..g_count.saturating_sub(1))
        .map(|g| Array2::zeros((layout.sizes[g + 1], layout.sizes[g])))
        .collect();
    let s = &gen.sqrt_table;
    let w = &gen.gain_diag;
    for (g, group) in layout.groups.iter().enumerate() {
        for &o in group {
            let base = layout.place[(o + dim as isize - 1) as usize]
                .expect("group offset is placed")
                .1;
            for j in 0..dim - o.unsigned_abs() {
                let (m, n) = if o >= 0 {
                    (j + o as usize, j)
                } else {
                    (j, j + (-o) as usize)
                };
                let row = base + j;
                let mut add = |m2: usize, n2: usize, c: C64| {
                    let (g2, col) = layout
                        .locate(m2, n2)
                        .expect("generator referenced an offset outside the solved sector");
                    if g2 == g {
                        diag[g][[row, col]] += c;
                    } else if g2 == g + 1 {
                        upper[g][[row, col]] += c;
                    } else if g2 + 1 == g {
                        lower[g2][[row, col]] += c;
                    } else {
                        unreachable!("generator coupling spans more than adjacent groups");
                    }
                };
                // The terms below mirror Liouvillian::apply_into exactly,
                // including the guard clauses encoding the truncated
                // ladder.
                if gen.drive_up != zero {
                    if m >= 1 {
                        add(m - 1, n, gen.drive_up * s[m]);
                    }
                    if n + 1 < dim {
                        add(m, n + 1, -(gen.drive_up * s[n + 1]));
                    }
                }
                if gen.drive_dn != zero {
                    if m + 1 < dim {
                        add(m + 1, n, gen.drive_dn * s[m + 1]);
                    }
                    if n >= 1 {
                        add(m, n - 1, -(gen.drive_dn * s[n]));
                    }
                }
                if gen.pump_up != zero {
                    if m >= 1 && n + 1 < dim {
                        add(m - 1, n + 1, gen.pump_up * (2.0 * s[m] * s[n + 1]));
                    }
                    if m >= 2 {
                        add(m - 2, n, -(gen.pump_up * (s[m] * s[m - 1])));
                    }
                    if n + 2 < dim {
                        add(m, n + 2, -(gen.pump_up * (s[n + 1] * s[n + 2])));
                    }
                }
                if gen.pump_dn != zero {
                    if m + 1 < dim && n >= 1 {
                        add(m + 1, n - 1, gen.pump_dn * (2.0 * s[m + 1] * s[n]));
                    }
                    if m + 2 < dim {
                        add(m + 2, n, -(gen.pump_dn * (s[m + 1] * s[m + 2])));
                    }
                    if n >= 2 {
                        add(m, n - 2, -(gen.pump_dn * (s[n] * s[n - 1])));
                    }
                }
                if m >= 1 && n >= 1 {
                    add(m - 1, n - 1, C64::new(gen.gain * 2.0 * s[m] * s[n], 0.0));
                }
                add(m, n, C64::new(-(gen.gain * (w[m] + w[n])), 0.0));
                if m + 1 < dim && n + 1 < dim {
                    add(
                        m + 1,
                        n + 1,
                        C64::new(gen.loss * 2.0 * s[m + 1] * s[n + 1], 0.0),
                    );
                }
                add(m, n, C64::new(-(gen.loss * (m + n) as f64), 0.0));
            }
        }
    }
    // Trace preservation makes the population equations linearly
    // dependent; substitute the unit-trace row for the redundant (0,0)
    // equation. The trace functional touches offset-0 elements only, so
    // the chain stays tridiagonal.
    let tg = layout.trace_group;
    let tr = layout.trace_row;
    diag[tg].row_mut(tr).fill(zero);
    if tg > 0 {
        lower[tg - 1].row_mut(tr).fill(zero);
    }
    if tg + 1 < g_count {
        upper[tg].row_mut(tr).fill(zero);
    }
    let (g0, base0) = layout.place[dim - 1].expect("offset 0 is placed");
    debug_assert_eq!(g0, tg);
    for ptr in 0..dim {
        diag[tg][[tr, base0 + ptr]] = C64::new(1.0, 0.0);
    }
    let mut rhs: Vec<Array1<C64>> = layout.sizes.iter().map(|&sz| Array1::zeros(sz)).collect();
    rhs[tg][tr] = C64::new(1.0, 0.0);
    BlockChain {
        diag,
        upper,
        lower,
        rhs,
    }
}

/// Thomas elimination over the block chain; returns the per-group
/// solutions.
fn solve_block_chain(mut sys: BlockChain) -> Result<Vec<Array1<C64>>, DynamicsError> {
    let g_count = sys.diag.len();
    let empty = || Array2::<C64>::zeros((0, 0));
    let mut carries: Vec<Array2<C64>> = Vec::with_capacity(g_count.saturating_sub(1));
    let mut ys: Vec<Array1<C64>> = Vec::with_capacity(g_count);
    let mut worst_pivot = f64::INFINITY;
    for g in 0..g_count {
        let mut d = std::mem::replace(&mut sys.diag[g], empty());
        if g > 0 {
            let low = std::mem::replace(&mut sys.lower[g - 1], empty());
            linalg::gemm_sub_into(&mut d, &low.view(), &carries[g - 1].view());
            let shift = low.dot(&ys[g - 1]);
            sys.rhs[g] -= &shift;
        }
        let lu = Lu::new(d).map_err(|e| {
            DynamicsError::NoSteadyState(format!("block elimination hit a singular pivot: {e}"))
        })?;
        worst_pivot = worst_pivot.min(lu.min_pivot_ratio);
        if g + 1 < g_count {
            let mut r = std::mem::replace(&mut sys.upper[g], empty());
            lu.solve_in_place(&mut r);
            carries.push(r);
        }
        ys.push(lu.solve_vec(&sys.rhs[g]));
    }
    if worst_pivot < STEADY_PIVOT_TOL {
        return Err(DynamicsError::NoSteadyState(format!(
            "the stationarity system is numerically degenerate (pivot ratio {worst_pivot:.3e})"
        )));
    }
    for g in (0..g_count.saturating_sub(1)).rev() {
        let correction = carries[g].dot(&ys[g + 1]);
        ys[g] -= &correction;
    }
    Ok(ys)
}

/// Solves `𝓛ρ = 0`, `tr ρ = 1` for the stationary field state.
///
/// Below threshold (`r_g > r_e`) the generator contracts onto a unique
/// fixed point. The solver exploits the fact that matrix elements couple
/// only within and between nearby diagonal offsets `m − n`:
///
/// * `λ = ξ = 0`: offsets decouple; the main diagonal alone carries the
///   state (a birth–death chain).
/// * `λ ≠ 0, ξ = 0`: adjacent offsets couple; block-tridiagonal.
/// * `λ = 0, ξ ≠ 0`: offsets couple two apart; the odd sector decouples
///   and is dropped, leaving a block-tridiagonal chain over even offsets.
/// * both nonzero: consecutive offsets are paired, again tridiagonal.
///
/// A block elimination with the unit-trace row substituted for the
/// redundant `(0,0)` equation solves the system in `O(dim⁴)` time and
/// `O(dim³)` memory. The solution is then verified — residual `‖𝓛ρ‖`
/// at solver precision, positivity of the state — and near-singular pivots
/// (a degenerate null space) are reported as
/// [`DynamicsError::NoSteadyState`] instead of being resolved silently.
pub fn steady_state(gen: &Liouvillian) -> Result<FieldState, DynamicsError> {
    let coeffs = gen.coeffs();
    let gap = coeffs.rate_gap();
    if gap <= 0.0 {
        return Err(DynamicsError::NoSteadyState(format!(
            "r_g − r_e = {gap:.6e} ≤ 0: at or above threshold the photon number grows without bound"
        )));
    }
    if gen.params().mu() == 0.0 {
        return Err(DynamicsError::NoSteadyState(
            "the generator vanishes (μ = 0): every state is stationary".into(),
        ));
    }
    let dim = gen.fock().dim();
    let zero = C64::new(0.0, 0.0);
    let layout = OffsetLayout::new(dim, coeffs.lambda != zero, coeffs.xi != zero);
    let sys = assemble_block_chain(gen, &layout);
    let ys = solve_block_chain(sys)?;

    let mut rho: Array2<C64> = Array2::zeros((dim, dim));
    for (g, group) in layout.groups.iter().enumerate() {
        for &o in group {
            let base = layout.place[(o + dim as isize - 1) as usize]
                .expect("group offset is placed")
                .1;
            for j in 0..dim - o.unsigned_abs() {
                let (m, n) = if o >= 0 {
                    (j + o as usize, j)
                } else {
                    (j, j + (-o) as usize)
                };
                rho[[m, n]] = ys[g][base + j];
            }
        }
    }
    // The chain solves the complex system without imposing Hermiticity;
    // restore it exactly (deviations are at rounding level).
    let mut sym: Array2<C64> = Array2::zeros((dim, dim));
    for m in 0..dim {
        for n in 0..dim {
            sym[[m, n]] = 0.5 * (rho[[m, n]] + rho[[n, m]].conj());
        }
    }

    let residual = linalg::frobenius_norm(&gen.apply(&sym.view()).view());
    let scale = gen.norm_estimate().max(f64::MIN_POSITIVE);
    if residual / scale > STEADY_RESIDUAL_TOL {
        return Err(DynamicsError::NoSteadyState(format!(
            "stationarity residual ‖𝓛ρ‖ = {residual:.3e} is large relative to ‖𝓛‖ ≈ {scale:.3e}; \
             the null space is suspect"
        )));
    }
    let state = FieldState::with_tolerance(gen.fock(), sym, FIELD_TOL)
        .map_err(|e| DynamicsError::NoSteadyState(format!("solution is not a density matrix: {e}")))?;
    state
        .validate_positivity(STEADY_POSITIVITY_TOL)
        .map_err(|e| DynamicsError::NoSteadyState(e.to_string()))?;
    Ok(state)
}

// ---------------------------------------------------------------------------
// Closed-form moment flow
// ---------------------------------------------------------------------------

/// Advances the first and second field moments by `t` in closed form.
///
/// The moment equations close into a linear system with constant
/// coefficients,
///
/// ```text
///   d⟨a⟩/dt  = −β⟨a⟩ − i·pgτ·λ
///   d⟨a²⟩/dt = −2β⟨a²⟩ − 2i·pgτ·λ⟨a⟩ − 2μξ
///   d⟨n⟩/dt  = −2β⟨n⟩ + μ r_e + 2·pgτ·Im(λ·⟨a⟩*)
/// ```
///
/// with `β = μ(r_g − r_e)/2`, solved here exactly (matrix exponentials of
/// a triangular system, written out). At threshold (`β = 0`) the flow
/// degenerates into polynomial growth and the corresponding exact branch
/// is used. Negative `t` runs the flow backwards; the formulas remain
/// exact.
pub fn ehrenfest_evolve(
    coeffs: &FuelCoefficients,
    params: &MaserParams,
    initial: MomentState,
    t: f64,
) -> MomentState {
    let kd = params.p * params.g_tau();
    let mu = params.mu();
    let beta = mu * coeffs.rate_gap() / 2.0;
    let lam = coeffs.lambda;
    let i = C64::new(0.0, 1.0);
    let a0 = initial.mean_a;
    let z0 = initial.mean_a2;
    let n0 = initial.mean_n;
    if beta == 0.0 {
        let drift = -i * kd * lam;
        let mean_a = a0 + drift * t;
        let mean_a2 = z0
            - (2.0 * mu * coeffs.xi + 2.0 * i * kd * lam * a0) * t
            - (kd * lam) * (kd * lam) * (t * t);
        let mean_n = n0
            + (mu * coeffs.r_e + 2.0 * kd * (lam * a0.conj()).im) * t
            + (kd * lam.norm()) * (kd * lam.norm()) * (t * t);
        return MomentState {
            mean_a,
            mean_a2,
            mean_n,
        };
    }
    let e1 = (-beta * t).exp();
    let e2 = (-2.0 * beta * t).exp();
    // ⟨a⟩ relaxes toward A, the two quadratic moments toward their own
    // fixed points with the doubled rate.
    let a_fix = -i * kd * lam / beta;
    let a_dev = a0 - a_fix;
    let mean_a = a_fix + a_dev * e1;
    let z_fix = -(mu * coeffs.xi + i * kd * lam * a_fix) / beta;
    let z_mid = -2.0 * i * kd * lam * a_dev / beta;
    let mean_a2 = z_fix + z_mid * e1 + (z0 - z_fix - z_mid) * e2;
    let n_fix = (mu * coeffs.r_e + 2.0 * kd * (lam * a_fix.conj()).im) / (2.0 * beta);
    let n_mid = 2.0 * kd * (lam * a_dev.conj()).im / beta;
    let mean_n = n_fix + n_mid * e1 + (n0 - n_fix - n_mid) * e2;
    MomentState {
        mean_a,
        mean_a2,
        mean_n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn vacuum_moments_are_zero() {
        let fock = FockSpace::new(12).unwrap();
        let v = FieldState::vacuum(fock);
        assert_eq!(v.mean_a(), c(0.0, 0.0));
        assert_eq!(v.mean_a2(), c(0.0, 0.0));
        assert_eq!(v.mean_n(), 0.0);
        assert_eq!(v.purity(), 1.0);
        assert_eq!(v.leakage(), 0.0);
    }

    #[test]
    fn coherent_state_moments_match_amplitude() {
        // |α⟩ with small α so the dim-30 truncation error is negligible.
        let fock = FockSpace::new(30).unwrap();
        let alpha = c(0.4, -0.3);
        let mut amp = Vec::with_capacity(30);
        let mut cur = c(1.0, 0.0);
        for p in 0..30 {
            if p > 0 {
                cur *= alpha / (p as f64).sqrt();
            }
            amp.push(cur);
        }
        let norm: f64 = amp.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let matrix =
            Array2::from_shape_fn((30, 30), |(i, j)| amp[i] * amp[j].conj() / (norm * norm));
        let s = FieldState::new(fock, matrix).unwrap();
        assert!((s.mean_a() - alpha).norm() < 1e-12);
        assert!((s.mean_a2() - alpha * alpha).norm() < 1e-12);
        assert!((s.mean_n() - alpha.norm_sqr()).abs() < 1e-12);
        assert!((s.purity() - 1.0).abs() < 1e-12);
        assert!(s.moments().is_physical(1e-12));
    }

    #[test]
    fn thermal_state_mean_occupation() {
        let fock = FockSpace::new(220).unwrap();
        let s = FieldState::thermal(fock, 2.5).unwrap();
        // Truncation at dim 220 leaves an exponentially small tail.
        assert!((s.mean_n() - 2.5).abs() < 1e-9);
        assert_eq!(s.mean_a(), c(0.0, 0.0));
        let p0 = s.matrix()[[0, 0]].re;
        let p1 = s.matrix()[[1, 1]].re;
        assert!((p1 / p0 - 2.5 / 3.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_states_are_rejected() {
        let fock = FockSpace::new(4).unwrap();
        // Wrong dimension.
        assert!(matches!(
            FieldState::new(fock, Array2::zeros((3, 3))),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
        // Non-unit trace.
        let mut m = Array2::zeros((4, 4));
        m[[0, 0]] = c(0.7, 0.0);
        assert!(FieldState::new(fock, m.clone()).is_err());
        // Non-Hermitian.
        m[[0, 0]] = c(1.0, 0.0);
        m[[0, 1]] = c(0.1, 0.0);
        assert!(FieldState::new(fock, m).is_err());
        // Negative thermal occupation.
        assert!(FieldState::thermal(fock, -0.1).is_err());
    }

    #[test]
    fn leakage_counts_guard_band_population() {
        let fock = FockSpace::new(20).unwrap();
        assert_eq!(fock.guard_start(), 18);
        let mut w = vec![0.0; 20];
        w[0] = 0.9;
        w[18] = 0.05;
        w[19] = 0.05;
        let s = FieldState::from_weights(fock, &w).unwrap();
        assert!((s.leakage() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn moment_physicality_check() {
        let good = MomentState {
            mean_a: c(1.0, 0.0),
            mean_a2: c(1.0, 0.0),
            mean_n: 1.0,
        };
        assert!(good.is_physical(1e-12));
        let bad = MomentState {
            mean_a: c(2.0, 0.0),
            mean_a2: c(4.0, 0.0),
            mean_n: 1.0,
        };
        assert!(!bad.is_physical(1e-12));
    }

    // -- evolution ----------------------------------------------------------

    use crate::cluster::{make_named_state, NamedState};
    use crate::generator::{build_liouvillian, fuel_coefficients};

    fn liou(coeffs: FuelCoefficients, g: f64, tau: f64, p: f64, dim: usize) -> Liouvillian {
        build_liouvillian(
            coeffs,
            MaserParams::new(g, tau, p).unwrap(),
            FockSpace::new(dim).unwrap(),
        )
    }

    fn named_coeffs(name: NamedState) -> FuelCoefficients {
        fuel_coefficients(&make_named_state(name).unwrap()).unwrap()
    }

    fn coeffs(r_e: f64, r_g: f64, lambda: C64, xi: C64) -> FuelCoefficients {
        FuelCoefficients::new(r_e, r_g, lambda, xi).unwrap()
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        assert!(matches!(
            EvolutionConfig::new(0.0, 1.0),
            Err(DynamicsError::ParameterOutOfRange { name: "dt", .. })
        ));
        assert!(matches!(
            EvolutionConfig::new(0.1, -1.0),
            Err(DynamicsError::ParameterOutOfRange { name: "t_max", .. })
        ));
        let mut cfg = EvolutionConfig::new(0.1, 1.0).unwrap();
        cfg.sample_stride = 0;
        assert!(cfg.validate().is_err());
        let cfg = EvolutionConfig::new(0.1, 1.0).unwrap().with_leak_tol(0.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_generator_keeps_state_constant() {
        let dim = 8;
        let fock = FockSpace::new(dim).unwrap();
        let initial = FieldState::thermal(fock, 0.4).unwrap();
        let gen = liou(coeffs(0.0, 0.0, c(0.0, 0.0), c(0.0, 0.0)), 1.0, 0.05, 1.0, dim);
        for method in [EvolutionMethod::OdeRk4, EvolutionMethod::ExpmStep] {
            // The thermal tail already sits in the guard band; this test is
            // about constancy, so give the leak monitor room.
            let cfg = EvolutionConfig::new(0.05, 1.0)
                .unwrap()
                .with_method(method)
                .with_leak_tol(1e-3);
            let traj = evolve_master(&initial, &gen, &cfg).unwrap();
            assert_eq!(traj.status, TrajectoryStatus::Completed);
            assert_eq!(traj.len(), 21);
            for k in 0..traj.len() {
                assert!((traj.mean_n[k] - traj.mean_n[0]).abs() <= 1e-14);
                assert!((traj.purity[k] - traj.purity[0]).abs() <= 1e-14);
            }
            let diff = &initial.matrix().view() - &traj.final_state().matrix().view();
            assert!(linalg::max_abs(&diff.view()) <= 1e-14);
        }
    }

    #[test]
    fn evolution_rejects_bad_setups() {
        let dim = 30;
        let gen = liou(named_coeffs(NamedState::WSymmetric), 1.0, 0.05, 1.0, dim);
        let vac = FieldState::vacuum(FockSpace::new(dim).unwrap());
        // Step too coarse for rk4 stability.
        let coarse = EvolutionConfig::new(10.0, 20.0).unwrap();
        assert!(matches!(
            evolve_master(&vac, &gen, &coarse),
            Err(DynamicsError::ParameterOutOfRange { name: "dt", .. })
        ));
        // Dense propagator capped in dimension.
        let cfg = EvolutionConfig::new(0.05, 1.0)
            .unwrap()
            .with_method(EvolutionMethod::ExpmStep);
        assert!(matches!(
            evolve_master(&vac, &gen, &cfg),
            Err(DynamicsError::ParameterOutOfRange {
                name: "fock dim",
                ..
            })
        ));
        // Monte Carlo config routed to the deterministic integrator.
        let mc = EvolutionConfig::new(0.05, 1.0)
            .unwrap()
            .with_method(EvolutionMethod::MonteCarlo);
        assert!(matches!(
            evolve_master(&vac, &gen, &mc),
            Err(DynamicsError::MethodMismatch { .. })
        ));
        // And the reverse.
        let w = make_named_state(NamedState::WSymmetric).unwrap();
        let params = MaserParams::new(1.0, 0.05, 1.0).unwrap();
        let cfg = EvolutionConfig::new(0.05, 1.0).unwrap();
        assert!(matches!(
            evolve_monte_carlo(&vac, &w, &params, &cfg),
            Err(DynamicsError::MethodMismatch { .. })
        ));
        // Field and generator dimensions must agree.
        let small = FieldState::vacuum(FockSpace::new(10).unwrap());
        let fine = EvolutionConfig::new(0.01, 0.1).unwrap();
        assert!(matches!(
            evolve_master(&small, &gen, &fine),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn threshold_fuel_grows_linearly() {
        // Balanced corner fuel pumps heat symmetrically; the mean photon
        // number climbs at 3μ/2 while the distribution stays far from the
        // guard band.
        let dim = 30;
        let gen = liou(named_coeffs(NamedState::GhzSymmetric), 1.0, 0.05, 1.0, dim);
        let vac = FieldState::vacuum(FockSpace::new(dim).unwrap());
        let cfg = EvolutionConfig::new(0.2, 200.0).unwrap().with_sample_stride(50);
        let traj = evolve_master(&vac, &gen, &cfg).unwrap();
        assert_eq!(traj.status, TrajectoryStatus::Completed);
        let slope = 1.5 * gen.params().mu();
        for k in 1..traj.len() {
            let t = traj.times[k];
            let expected = slope * t;
            assert!(
                (traj.mean_n[k] - expected).abs() <= 0.01 * expected + 1e-9,
                "t = {t}: ⟨n⟩ = {} vs {expected}",
                traj.mean_n[k]
            );
        }
        // Heat pumping mixes the state.
        assert!(traj.purity.last().unwrap() < &0.7);
    }

    #[test]
    fn w_fuel_relaxes_toward_three_photons() {
        let dim = 30;
        let gen = liou(named_coeffs(NamedState::WSymmetric), 1.0, 0.05, 1.0, dim);
        let vac = FieldState::vacuum(FockSpace::new(dim).unwrap());
        let cfg = EvolutionConfig::new(0.09, 1200.0)
            .unwrap()
            .with_sample_stride(2000)
            .with_leak_tol(1e-3);
        let traj = evolve_master(&vac, &gen, &cfg).unwrap();
        assert_eq!(traj.status, TrajectoryStatus::Completed);
        // The exact moment flow tracks the truncated trajectory up to the
        // dim-30 truncation bias (≈5e-3 at the fixed point).
        let params = gen.params();
        let co = gen.coeffs();
        for k in 0..traj.len() {
            let reference = ehrenfest_evolve(&co, &params, MomentState::zero(), traj.times[k]);
            assert!(
                (traj.mean_n[k] - reference.mean_n).abs() <= 8e-3,
                "t = {}: ⟨n⟩ = {} vs moment flow {}",
                traj.times[k],
                traj.mean_n[k],
                reference.mean_n
            );
        }
        let last = *traj.mean_n.last().unwrap();
        assert!(last > 2.8 && last < 3.0);
        // Long integration must not bleed trace or Hermiticity.
        let trace: C64 = (0..dim)
            .map(|p| traj.final_state().matrix()[[p, p]])
            .sum();
        assert!((trace - c(1.0, 0.0)).norm() <= 1e-9);
        assert!(
            linalg::hermiticity_deviation(&traj.final_state().matrix().view()) <= 1e-9
        );
    }

    #[test]
    fn rk4_and_expm_step_agree() {
        let dim = 8;
        let gen = liou(
            coeffs(0.8, 1.6, c(0.01, 0.005), c(0.01, -0.005)),
            1.0,
            0.1,
            2.0,
            dim,
        );
        let initial = FieldState::vacuum(FockSpace::new(dim).unwrap());
        let rk4 = evolve_master(
            &initial,
            &gen,
            &EvolutionConfig::new(0.01, 2.0).unwrap(),
        )
        .unwrap();
        let expm = evolve_master(
            &initial,
            &gen,
            &EvolutionConfig::new(0.1, 2.0)
                .unwrap()
                .with_method(EvolutionMethod::ExpmStep),
        )
        .unwrap();
        assert_eq!(rk4.status, TrajectoryStatus::Completed);
        assert_eq!(expm.status, TrajectoryStatus::Completed);
        let diff = &rk4.final_state().matrix().view() - &expm.final_state().matrix().view();
        let gap = linalg::max_abs(&diff.view());
        assert!(gap <= 1e-8, "integrators disagree by {gap:.3e}");
    }

    #[test]
    fn leakage_aborts_with_partial_trajectory() {
        // Threshold fuel in a short ladder: the climbing distribution must
        // hit the guard band and stop the run.
        let dim = 10;
        let gen = liou(named_coeffs(NamedState::GhzSymmetric), 1.0, 0.05, 40.0, dim);
        let vac = FieldState::vacuum(FockSpace::new(dim).unwrap());
        let cfg = EvolutionConfig::new(0.012, 100.0).unwrap().with_sample_stride(10);
        let traj = evolve_master(&vac, &gen, &cfg).unwrap();
        match traj.status {
            TrajectoryStatus::LeakageAborted { t, leakage } => {
                assert!(t < 100.0);
                assert!(leakage > cfg.leak_tol);
            }
            TrajectoryStatus::Completed => panic!("run should have aborted on leakage"),
        }
        assert!(*traj.times.last().unwrap() < 100.0);
        assert!(*traj.leakage.last().unwrap() > cfg.leak_tol);
    }

    #[test]
    fn monte_carlo_without_injection_is_constant() {
        let dim = 16;
        let w = make_named_state(NamedState::WSymmetric).unwrap();
        let params = MaserParams::new(1.0, 0.05, 0.0).unwrap();
        let initial = FieldState::thermal(FockSpace::new(dim).unwrap(), 0.3).unwrap();
        let cfg = EvolutionConfig::new(0.5, 10.0)
            .unwrap()
            .with_method(EvolutionMethod::MonteCarlo)
            .with_seed(7);
        let traj = evolve_monte_carlo(&initial, &w, &params, &cfg).unwrap();
        assert_eq!(traj.status, TrajectoryStatus::Completed);
        for k in 0..traj.len() {
            assert_eq!(traj.mean_n[k], traj.mean_n[0]);
        }
        assert_eq!(traj.overlap_warnings, 0);
    }

    #[test]
    fn monte_carlo_is_reproducible_by_seed() {
        let dim = 24;
        let w = make_named_state(NamedState::WSymmetric).unwrap();
        let params = MaserParams::new(1.0, 0.05, 1.0).unwrap();
        let vac = FieldState::vacuum(FockSpace::new(dim).unwrap());
        let cfg = EvolutionConfig::new(1.0, 60.0)
            .unwrap()
            .with_method(EvolutionMethod::MonteCarlo)
            .with_seed(42);
        let a = evolve_monte_carlo(&vac, &w, &params, &cfg).unwrap();
        let b = evolve_monte_carlo(&vac, &w, &params, &cfg).unwrap();
        assert_eq!(a.mean_n, b.mean_n);
        assert_eq!(a.overlap_warnings, b.overlap_warnings);
        let other = evolve_monte_carlo(&vac, &w, &params, &cfg.with_seed(43)).unwrap();
        assert!(a.mean_n.iter().zip(&other.mean_n).any(|(x, y)| x != y));
    }

    #[test]
    fn monte_carlo_w_fuel_settles_at_three_photons() {
        let dim = 60;
        let w = make_named_state(NamedState::WSymmetric).unwrap();
        let params = MaserParams::new(1.0, 0.05, 1.0).unwrap();
        let vac = FieldState::vacuum(FockSpace::new(dim).unwrap());
        let cfg = EvolutionConfig::new(1.0, 10_000.0)
            .unwrap()
            .with_method(EvolutionMethod::MonteCarlo)
            .with_seed(11)
            .with_sample_stride(10)
            .with_leak_tol(1e-5);
        let traj = evolve_monte_carlo(&vac, &w, &params, &cfg).unwrap();
        assert_eq!(traj.status, TrajectoryStatus::Completed);
        let avg = traj.time_averaged_mean_n(4000.0).unwrap();
        assert!(
            (avg - 3.0).abs() <= 0.15,
            "time-averaged ⟨n⟩ = {avg} should sit within 5% of 3"
        );
        // At p·τ = 0.05 about 5% of the gaps under-run the transit time.
        assert!(traj.overlap_warnings > 200 && traj.overlap_warnings < 800);
    }

    #[test]
    fn steady_state_thermal_fuel_is_geometric() {
        let dim = 60;
        let gen = liou(named_coeffs(NamedState::WSymmetric), 1.0, 0.05, 1.0, dim);
        let s = steady_state(&gen).unwrap();
        let m = s.matrix();
        // Diagonal in the Fock basis…
        for p in 0..dim {
            for q in 0..dim {
                if p != q {
                    assert_eq!(m[[p, q]], c(0.0, 0.0));
                }
            }
        }
        // …with the detailed-balance ratio r_e/r_g on every rung of the
        // truncated ladder (the clipped top level only stops the climb,
        // it does not bend the balance).
        for p in 0..dim - 1 {
            let ratio = m[[p + 1, p + 1]].re / m[[p, p]].re;
            assert!(
                (ratio - 0.75).abs() <= 1e-12,
                "rung {p}: ratio {ratio}"
            );
        }
        // Mean photon number of the truncated geometric distribution.
        let x: f64 = 0.75;
        let norm: f64 = (0..dim).map(|p| x.powi(p as i32)).sum();
        let expect: f64 = (0..dim).map(|p| p as f64 * x.powi(p as i32)).sum::<f64>() / norm;
        assert!((s.mean_n() - expect).abs() <= 1e-12);
        assert!((s.mean_n() - 3.0).abs() <= 1e-5);
    }

    #[test]
    fn steady_state_refuses_threshold_inverted_and_idle() {
        let dim = 20;
        for co in [
            named_coeffs(NamedState::GhzSymmetric),
            named_coeffs(NamedState::EState),
        ] {
            assert!(matches!(
                steady_state(&liou(co, 1.0, 0.05, 1.0, dim)),
                Err(DynamicsError::NoSteadyState(_))
            ));
        }
        let idle = liou(named_coeffs(NamedState::WSymmetric), 1.0, 0.05, 0.0, dim);
        assert!(matches!(
            steady_state(&idle),
            Err(DynamicsError::NoSteadyState(_))
        ));
    }

    #[test]
    fn steady_state_of_pair_fuel_is_squeezed_vacuum() {
        let theta: f64 = 0.3;
        let gen = liou(
            named_coeffs(NamedState::TwoAtomSqueeze { theta }),
            1.0,
            0.05,
            1.0,
            24,
        );
        let s = steady_state(&gen).unwrap();
        let r = theta.tan().atanh();
        let mo = s.moments();
        assert!(mo.mean_a.norm() <= 1e-10);
        let var_x = 0.5 * (2.0 * mo.mean_a2.re + 2.0 * mo.mean_n + 1.0);
        let var_p = 0.5 * (-2.0 * mo.mean_a2.re + 2.0 * mo.mean_n + 1.0);
        assert!((var_x - 0.5 * (-2.0 * r).exp()).abs() <= 1e-6);
        assert!((var_p - 0.5 * (2.0 * r).exp()).abs() <= 1e-6);
        assert!((mo.mean_n - r.sinh().powi(2)).abs() <= 1e-6);
        // The pair pump saturates the squeezed-bath bound, so the steady
        // state is pure.
        assert!(s.purity() > 1.0 - 1e-6);
    }

    #[test]
    fn steady_state_displacement_fuel_matches_moment_fixed_point() {
        let lam = c(0.012, -0.004);
        let gen = liou(coeffs(0.3, 1.3, lam, c(0.0, 0.0)), 1.0, 0.05, 1.0, 24);
        let s = steady_state(&gen).unwrap();
        let g_tau = 0.05;
        let delta = 1.0;
        let a_expect = c(0.0, -2.0) * lam / (g_tau * delta);
        let a2_expect = c(-4.0, 0.0) * lam * lam / (g_tau * g_tau * delta * delta);
        let n_expect = 0.3 / delta + 4.0 * lam.norm_sqr() / (g_tau * g_tau * delta * delta);
        let mo = s.moments();
        assert!((mo.mean_a - a_expect).norm() <= 1e-9);
        assert!((mo.mean_a2 - a2_expect).norm() <= 1e-9);
        assert!((mo.mean_n - n_expect).abs() <= 1e-9);
    }

    #[test]
    fn steady_state_matches_dense_null_space() {
        // One fuel per structural path of the block solver: drive only,
        // pair pump only, both at once.
        let cases = [
            (coeffs(0.3, 1.1, c(0.01, 0.02), c(0.0, 0.0)), 12),
            (coeffs(0.2, 1.0, c(0.0, 0.0), c(0.05, -0.03)), 12),
            (coeffs(0.2, 1.0, c(0.005, 0.003), c(0.0, 0.04)), 14),
        ];
        for (co, dim) in cases {
            let gen = liou(co, 1.0, 0.05, 2.0, dim);
            let s = steady_state(&gen).unwrap();
            let flat = Array1::from_iter(s.matrix().iter().copied());
            let sup = gen.superoperator();
            let image = sup.dot(&flat);
            let worst = image.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(
                worst <= 1e-12 * gen.norm_estimate(),
                "‖𝓛ρ‖∞ = {worst}"
            );
            // The vectorized generator must have a one-dimensional null
            // space whose direction is the solved state.
            let gram = linalg::mat_mul(&linalg::dagger(&sup.view()).view(), &sup.view());
            let (evals, evecs) = linalg::eigh(&gram.view(), 1e-8).unwrap();
            let scale = linalg::inf_norm(&sup.view()).powi(2);
            assert!(evals[0] <= 1e-18 * scale);
            assert!(evals[1] >= 1e-9 * scale, "second eigenvalue {}", evals[1]);
            let null_dir = evecs.column(0);
            let overlap: C64 = null_dir
                .iter()
                .zip(flat.iter())
                .map(|(v, x)| v.conj() * x)
                .sum();
            let norm_flat = flat.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!(overlap.norm() / norm_flat >= 1.0 - 1e-8);
        }
    }

    #[test]
    fn moment_flow_zero_fuel_is_identity() {
        let co = coeffs(0.0, 0.0, c(0.0, 0.0), c(0.0, 0.0));
        let params = MaserParams::new(1.0, 0.05, 1.0).unwrap();
        let start = MomentState {
            mean_a: c(0.3, -0.2),
            mean_a2: c(0.1, 0.4),
            mean_n: 0.8,
        };
        let end = ehrenfest_evolve(&co, &params, start, 17.0);
        assert_eq!(end, start);
    }

    #[test]
    fn moment_flow_threshold_branch_is_polynomial() {
        let params = MaserParams::new(1.0, 0.05, 1.0).unwrap();
        let mu = params.mu();
        // Balanced heat pump: linear growth, no drive, no pair moments.
        let ghz = named_coeffs(NamedState::GhzSymmetric);
        let t = 80.0;
        let m = ehrenfest_evolve(&ghz, &params, MomentState::zero(), t);
        assert!((m.mean_n - 1.5 * mu * t).abs() <= 1e-13 * (1.0 + m.mean_n));
        assert_eq!(m.mean_a, c(0.0, 0.0));
        assert_eq!(m.mean_a2, c(0.0, 0.0));
        // Drive exactly at threshold: ballistic amplitude, quadratic
        // photon growth.
        let lam = c(0.1, 0.0);
        let co = coeffs(1.0, 1.0, lam, c(0.0, 0.0));
        let kd = params.p * params.g_tau();
        let t = 7.0;
        let m = ehrenfest_evolve(&co, &params, MomentState::zero(), t);
        let a_expect = c(0.0, -1.0) * kd * lam * t;
        assert!((m.mean_a - a_expect).norm() <= 1e-14);
        let z_expect = -(kd * lam * t) * (kd * lam * t);
        assert!((m.mean_a2 - z_expect).norm() <= 1e-14);
        let n_expect = mu * t + (kd * 0.1 * t).powi(2);
        assert!((m.mean_n - n_expect).abs() <= 1e-13);
    }

    #[test]
    fn moment_flow_matches_master_evolution() {
        let co = coeffs(0.5, 1.5, c(0.01, 0.005), c(0.0, 0.0));
        let dim = 20;
        let gen = liou(co, 1.0, 0.05, 5.0, dim);
        let params = gen.params();
        let initial = FieldState::vacuum(FockSpace::new(dim).unwrap());
        let cfg = EvolutionConfig::new(0.005, 20.0)
            .unwrap()
            .with_sample_stride(400);
        let traj = evolve_master(&initial, &gen, &cfg).unwrap();
        for k in 0..traj.len() {
            let reference = ehrenfest_evolve(&co, &params, MomentState::zero(), traj.times[k]);
            let got = traj.moments_at(k);
            assert!(
                (got.mean_a - reference.mean_a).norm() <= 1e-6,
                "t = {}",
                traj.times[k]
            );
            assert!((got.mean_a2 - reference.mean_a2).norm() <= 1e-6);
            assert!((got.mean_n - reference.mean_n).abs() <= 1e-6);
        }
        // Far future of the flow reproduces the closed fixed-point forms.
        let far = ehrenfest_evolve(&co, &params, MomentState::zero(), 1e5);
        let g_tau = params.g_tau();
        let delta = co.rate_gap();
        let lam = co.lambda;
        let a_fix = c(0.0, -2.0) * lam / (g_tau * delta);
        let n_fix = co.r_e / delta + 4.0 * lam.norm_sqr() / (g_tau * g_tau * delta * delta);
        assert!((far.mean_a - a_fix).norm() <= 1e-12);
        assert!((far.mean_n - n_fix).abs() <= 1e-12);
    }
}
