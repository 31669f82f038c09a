//! Closed-form predictions for the pumped cavity.
//!
//! Everything in this module is pure arithmetic on [`FuelCoefficients`]:
//! steady-state moments, the effective temperature a heat-only fuel imposes
//! on the field, the squeezed-bath standard form for pair-pumping fuels,
//! photon-number formulas for the named fuel families, the kick-by-kick
//! threshold series, and the machine-kind classification. The numerical
//! machinery in [`crate::dynamics`] exists to *check* these formulas; tests
//! here close that loop.

use crate::cluster::{phase_average, ClusterState};
use crate::dynamics::MomentState;
use crate::generator::{fuel_coefficients, FuelCoefficients, GeneratorError, MaserParams};
use crate::C64;
use thiserror::Error;

/// Zero test on coherent channel strengths `|λ|`, `|ξ|`.
pub const COHERENCE_TOL: f64 = 1e-12;

/// Zero test on the rate gap `r_g − r_e`.
pub const RATE_GAP_TOL: f64 = 1e-12;

/// Relative slack allowed on the squeezed-bath physicality bound
/// `M ≤ √(N(N+1))` before a coefficient set is rejected; fuels that
/// saturate the bound exactly in real arithmetic land within rounding of
/// it in floating point.
pub const BATH_PHYSICALITY_TOL: f64 = 1e-9;

/// Errors from the closed-form predictors.
#[derive(Debug, Error)]
pub enum AnalyticsError {
    /// No normalizable stationary field exists: gain meets or exceeds loss.
    #[error("above threshold: r_e = {r_e} ≥ r_g = {r_g}, no stationary field")]
    AboveThreshold { r_e: f64, r_g: f64 },
    /// A temperature was requested for a fuel with coherent channels.
    #[error(
        "not a heat-only fuel: |λ| = {lambda_abs:.3e}, |ξ| = {xi_abs:.3e} \
         exceed the coherence tolerance"
    )]
    NotThermalFuel { lambda_abs: f64, xi_abs: f64 },
    /// The squeezed-bath form requires a fuel without a drive channel.
    #[error("fuel drives the field: |λ| = {lambda_abs:.3e} exceeds the coherence tolerance")]
    DisplacingFuel { lambda_abs: f64 },
    /// The bath coefficients violate `M ≤ √(N(N+1))`.
    #[error("unphysical bath coefficients: M = {m_cap} exceeds √(N(N+1)) = {bound}")]
    UnphysicalBath { m_cap: f64, bound: f64 },
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

// ---------------------------------------------------------------------------
// Steady-state moments
// ---------------------------------------------------------------------------

/// Closed-form steady-state moments `(⟨a⟩, ⟨a²⟩, ⟨n⟩)` of the coarse-grained
/// flow, valid below threshold (`r_g > r_e`):
///
/// ```text
///   ⟨a⟩ss  = −2iλ / (gτ·Δ)
///   ⟨a²⟩ss = −2ξ/Δ − 4λ² / ((gτ)²·Δ²)
///   ⟨n⟩ss  = r_e/Δ + 4|λ|² / ((gτ)²·Δ²)
/// ```
///
/// with `Δ = r_g − r_e`. The pair moment uses the complex square `λ²`, not
/// `|λ|²`; the convention is pinned empirically by the test suite, which
/// compares these formulas against the block steady-state solver for fuels
/// with fully complex `λ`.
pub fn steady_moments(
    coeffs: FuelCoefficients,
    params: MaserParams,
) -> Result<MomentState, AnalyticsError> {
    let gap = coeffs.rate_gap();
    if gap <= 0.0 {
        return Err(AnalyticsError::AboveThreshold {
            r_e: coeffs.r_e,
            r_g: coeffs.r_g,
        });
    }
    let g_tau = params.g_tau();
    let lam = coeffs.lambda;
    let mean_a = C64::new(0.0, -2.0) * lam / (g_tau * gap);
    let mean_a2 =
        -2.0 * coeffs.xi / gap - 4.0 * lam * lam / (g_tau * g_tau * gap * gap);
    let mean_n = coeffs.r_e / gap + 4.0 * lam.norm_sqr() / (g_tau * g_tau * gap * gap);
    Ok(MomentState {
        mean_a,
        mean_a2,
        mean_n,
    })
}

// ---------------------------------------------------------------------------
// Effective temperature
// ---------------------------------------------------------------------------

/// Qualitative regime of an effective temperature, carried alongside the
/// numeric value so that infinite and inverted regimes never propagate as
/// `NaN`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemperatureStatus {
    /// `0 ≤ T < ∞`: the fuel thermalizes the field.
    Finite,
    /// `r_g = r_e`: the photon number never converges.
    Infinite,
    /// `r_g < r_e`: population inversion, formally negative temperature.
    Negative,
}

impl std::fmt::Display for TemperatureStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TemperatureStatus::Finite => "finite",
            TemperatureStatus::Infinite => "infinite",
            TemperatureStatus::Negative => "negative",
        })
    }
}

/// Effective thermal environment a heat-only fuel presents to the field.
///
/// Temperatures are in units of `ħω/k_B` where `ω` is the mode frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalReport {
    /// `T = 1/ln(r_g/r_e)`; `+∞` at threshold, negative when inverted.
    pub temperature: f64,
    /// Regime flag for `temperature`.
    pub status: TemperatureStatus,
    /// Bath excitation `n̄ = r_e/(r_g − r_e)`; `+∞` at threshold, negative
    /// when inverted.
    pub nbar: f64,
    /// Steady photon number; equals `n̄` for a heat-only fuel.
    pub n_ss: f64,
    /// Whether `r_g > r_e` (a stationary field exists).
    pub below_threshold: bool,
    /// Temperature of the same cluster with every coherence erased.
    /// `None` when the report was computed from bare coefficients, which do
    /// not retain enough information to dephase the cluster; filled by
    /// [`effective_temperature_of_cluster`].
    pub t_phase_averaged: Option<f64>,
}

fn thermal_report_from_rates(r_e: f64, r_g: f64) -> ThermalReport {
    let gap = r_g - r_e;
    if gap.abs() <= RATE_GAP_TOL {
        return ThermalReport {
            temperature: f64::INFINITY,
            status: TemperatureStatus::Infinite,
            nbar: f64::INFINITY,
            n_ss: f64::INFINITY,
            below_threshold: false,
            t_phase_averaged: None,
        };
    }
    // ln(r_g/r_e) handles the edges through IEEE arithmetic: r_e = 0 gives
    // ln(+∞) = +∞ and hence T = 0 (an empty bath is a zero-temperature
    // bath); r_g = 0 gives T = −0.
    let temperature = 1.0 / (r_g / r_e).ln();
    let nbar = r_e / gap;
    let below = gap > 0.0;
    ThermalReport {
        temperature,
        status: if below {
            TemperatureStatus::Finite
        } else {
            TemperatureStatus::Negative
        },
        nbar,
        n_ss: nbar,
        below_threshold: below,
        t_phase_averaged: None,
    }
}

/// Effective temperature of a heat-only fuel, from the detailed-balance
/// ratio of its rates: `exp(−1/T) = r_e/r_g`, i.e. `T = 1/ln(r_g/r_e)` in
/// units of `ħω/k_B`.
///
/// # Errors
///
/// [`AnalyticsError::NotThermalFuel`] when `|λ|` or `|ξ|` exceeds
/// [`COHERENCE_TOL`]: a fuel with coherent channels does not impose a
/// temperature.
pub fn effective_temperature(coeffs: FuelCoefficients) -> Result<ThermalReport, AnalyticsError> {
    let lambda_abs = coeffs.lambda.norm();
    let xi_abs = coeffs.xi.norm();
    if lambda_abs > COHERENCE_TOL || xi_abs > COHERENCE_TOL {
        return Err(AnalyticsError::NotThermalFuel { lambda_abs, xi_abs });
    }
    Ok(thermal_report_from_rates(coeffs.r_e, coeffs.r_g))
}

/// Effective temperature of a cluster state, with the comparison value for
/// its dephased twin filled in.
///
/// The report's `t_phase_averaged` is the temperature the same cluster
/// would impose if every coherence were erased ([`phase_average`]); the
/// difference between the two temperatures is exactly the contribution of
/// the equal-excitation coherences to the rates.
pub fn effective_temperature_of_cluster(
    state: &ClusterState,
) -> Result<ThermalReport, AnalyticsError> {
    let coeffs = fuel_coefficients(state)?;
    let mut report = effective_temperature(coeffs)?;
    let dephased = fuel_coefficients(&phase_average(state))?;
    report.t_phase_averaged = Some(thermal_report_from_rates(dephased.r_e, dephased.r_g).temperature);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Squeezed-bath standard form
// ---------------------------------------------------------------------------

/// Standard-form coefficients of the effective squeezed thermal bath seen
/// by the field when the fuel pumps photon pairs (`ξ ≠ 0`, `λ = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezedBathReport {
    /// Relaxation rate in units of the pump strength `μ = p(gτ)²`:
    /// `κ/μ = (r_g − r_e)/2`.
    pub kappa: f64,
    /// Standard-form coefficient `N = r_e/(r_g − r_e)`.
    pub n_cap: f64,
    /// Standard-form coefficient `M = 2|ξ|/(r_g − r_e)`.
    pub m_cap: f64,
    /// Squeezing parameter of the stationary state, from
    /// `tanh 2r = 2M/(2N + 1)`.
    pub r: f64,
    /// Ambient (unsqueezed) excitation `n̄ = (N − sinh²r)/cosh 2r`.
    pub nbar: f64,
}

/// Casts a pair-pumping fuel into squeezed-thermal-bath standard form and
/// inverts it for the squeezing parameter `r` and ambient excitation `n̄`.
///
/// The inversion solves `tanh 2r = 2M/(2N+1)` first and then reads `n̄`
/// from `N = n̄(cosh²r + sinh²r) + sinh²r`; it is exact whenever
/// `M ≤ √(N(N+1))`. Fuels that saturate the bound yield `n̄ = 0`: a pure
/// squeezed vacuum. `ξ = 0` is accepted and reduces to an unsqueezed
/// thermal bath (`r = 0`, `n̄ = N`).
///
/// For the two-atom superposition `sinθ|ee⟩ + cosθ|gg⟩` this reproduces
/// `κ/μ = cos 2θ`, `n̄ = 0`, and `r = atanh(tan θ)`.
///
/// # Errors
///
/// [`AnalyticsError::DisplacingFuel`] when `|λ|` exceeds [`COHERENCE_TOL`];
/// [`AnalyticsError::AboveThreshold`] when `r_g ≤ r_e`;
/// [`AnalyticsError::UnphysicalBath`] when `M` exceeds `√(N(N+1))` beyond
/// [`BATH_PHYSICALITY_TOL`].
pub fn squeezed_bath_params(
    coeffs: FuelCoefficients,
) -> Result<SqueezedBathReport, AnalyticsError> {
    let lambda_abs = coeffs.lambda.norm();
    if lambda_abs > COHERENCE_TOL {
        return Err(AnalyticsError::DisplacingFuel { lambda_abs });
    }
    let gap = coeffs.rate_gap();
    if gap <= 0.0 {
        return Err(AnalyticsError::AboveThreshold {
            r_e: coeffs.r_e,
            r_g: coeffs.r_g,
        });
    }
    let n_cap = coeffs.r_e / gap;
    let m_cap = 2.0 * coeffs.xi.norm() / gap;
    let bound = (n_cap * (n_cap + 1.0)).sqrt();
    if m_cap > bound + BATH_PHYSICALITY_TOL * (1.0 + n_cap) {
        return Err(AnalyticsError::UnphysicalBath { m_cap, bound });
    }
    // Clip rounding overshoot of a saturated bound so the inversion stays
    // inside the domain of atanh.
    let m_eff = m_cap.min(bound);
    let r = 0.5 * (2.0 * m_eff / (2.0 * n_cap + 1.0)).atanh();
    let nbar = ((n_cap - r.sinh().powi(2)) / (2.0 * r).cosh()).max(0.0);
    Ok(SqueezedBathReport {
        kappa: gap / 2.0,
        n_cap,
        m_cap,
        r,
        nbar,
    })
}

// ---------------------------------------------------------------------------
// Named-family photon numbers
// ---------------------------------------------------------------------------

/// Steady photon number of the general single-excitation three-atom fuel
/// `cosθ cos(ψ/2)|egg⟩ + sinθ cos(ψ/2) e^{iφ}|geg⟩ + sin(ψ/2) e^{iδ}|gge⟩`:
///
/// ```text
///   ⟨n⟩ss = 1 + sin 2θ cos²(ψ/2) cos φ + cos θ sin ψ cos δ
///             + sin θ sin ψ cos(φ − δ)
/// ```
///
/// The family is heat-only with a rate gap of exactly 1, so this is also
/// its emission rate `r_e`.
pub fn w_state_photon_number(theta: f64, psi: f64, phi: f64, delta: f64) -> f64 {
    let half_psi_cos_sq = (psi / 2.0).cos().powi(2);
    1.0 + (2.0 * theta).sin() * half_psi_cos_sq * phi.cos()
        + theta.cos() * psi.sin() * delta.cos()
        + theta.sin() * psi.sin() * (phi - delta).cos()
}

/// Steady photon number of the two-branch fuel
/// `cos(θ/2)|eee⟩ + sin(θ/2)|ggg⟩`, or [`GhzPrediction::Divergent`] when
/// the fuel sits at or above threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GhzPrediction {
    /// Below threshold: the stationary photon number.
    Finite(f64),
    /// At or above threshold (`θ ≤ π/2`): no stationary value.
    Divergent,
}

impl GhzPrediction {
    /// The finite value, if any.
    pub fn value(self) -> Option<f64> {
        match self {
            GhzPrediction::Finite(n) => Some(n),
            GhzPrediction::Divergent => None,
        }
    }
}

/// Evaluates `⟨n⟩ss = cos²(θ/2) / (sin²(θ/2) − cos²(θ/2))` for the
/// two-branch fuel; the denominator is the rate gap up to a factor 3, so
/// the prediction is flagged [`GhzPrediction::Divergent`] when
/// `sin²(θ/2) ≤ cos²(θ/2)` — on `[0, π]` exactly `θ ≤ π/2`.
pub fn ghz_photon_number(theta: f64) -> GhzPrediction {
    let excited_weight = (theta / 2.0).cos().powi(2);
    let ground_weight = (theta / 2.0).sin().powi(2);
    if ground_weight <= excited_weight {
        GhzPrediction::Divergent
    } else {
        GhzPrediction::Finite(excited_weight / (ground_weight - excited_weight))
    }
}

// ---------------------------------------------------------------------------
// Threshold series
// ---------------------------------------------------------------------------

/// Kick-by-kick photon budget of a heat-only fuel: every transit multiplies
/// the distance to the fixed point by `ratio` and deposits `gain` photons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSeries {
    /// Increment ratio `k = 1 − (gτ)²(r_g − r_e)/2` between consecutive
    /// per-kick photon gains.
    pub ratio: f64,
    /// First-kick photon yield `(gτ)² r_e/2`.
    pub gain: f64,
    /// Whether the series converges: `k < 1`, i.e. `r_g > r_e`.
    pub convergent: bool,
}

impl ThresholdSeries {
    /// Photon number after `j` kicks, `Σ_{i=1..j} k^{i−1}·gain`, in closed
    /// form.
    pub fn partial_sum(&self, j: usize) -> f64 {
        if self.ratio == 1.0 {
            return j as f64 * self.gain;
        }
        self.gain * (1.0 - self.ratio.powi(j as i32)) / (1.0 - self.ratio)
    }

    /// The first `count` partial sums, accumulated term by term.
    pub fn partial_sums(&self, count: usize) -> Vec<f64> {
        let mut sums = Vec::with_capacity(count);
        let mut total = 0.0;
        let mut term = self.gain;
        for _ in 0..count {
            total += term;
            term *= self.ratio;
            sums.push(total);
        }
        sums
    }

    /// Series limit `gain/(1 − k) = r_e/(r_g − r_e)`; `None` when the
    /// series diverges.
    pub fn limit(&self) -> Option<f64> {
        self.convergent.then(|| self.gain / (1.0 - self.ratio))
    }
}

/// Threshold analysis of a heat-only fuel: the geometric series of per-kick
/// photon gains, whose ratio crossing 1 is the maser threshold.
///
/// Only the rates enter; the coherent channels `λ`, `ξ` feed the field
/// through amplitude moments, outside this photon-count bookkeeping, and
/// are ignored here. The series limit equals the stationary photon number
/// `r_e/(r_g − r_e)` exactly when it converges.
pub fn threshold_increment(coeffs: FuelCoefficients, g_tau: f64) -> ThresholdSeries {
    let ratio = 1.0 - g_tau * g_tau * coeffs.rate_gap() / 2.0;
    ThresholdSeries {
        ratio,
        gain: g_tau * g_tau * coeffs.r_e / 2.0,
        convergent: ratio < 1.0,
    }
}

// ---------------------------------------------------------------------------
// Machine kinds
// ---------------------------------------------------------------------------

/// What kind of thermal machine a fuel can power.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MachineKind {
    /// Coherent channels present (`λ ≠ 0` or `ξ ≠ 0`): the fuel hands the
    /// field work as well as heat, leaving it nonpassive.
    FirstKind,
    /// Heat-only with `r_g > r_e`: the fuel thermalizes the field — a
    /// proper heat engine's hot bath.
    SecondKind,
    /// Heat-only with `r_g = r_e`: the maser threshold; no stationary
    /// field.
    AtThreshold,
    /// Heat-only with `r_g < r_e`: population-inverted pumping.
    Inverted,
}

impl std::fmt::Display for MachineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MachineKind::FirstKind => "first kind",
            MachineKind::SecondKind => "second kind",
            MachineKind::AtThreshold => "at threshold",
            MachineKind::Inverted => "inverted",
        })
    }
}

/// Classifies a fuel by its coefficient structure, using [`COHERENCE_TOL`]
/// for the zero tests on `|λ|`, `|ξ|` and [`RATE_GAP_TOL`] on `r_g − r_e`.
pub fn classify_machine_kind(coeffs: FuelCoefficients) -> MachineKind {
    if coeffs.lambda.norm() > COHERENCE_TOL || coeffs.xi.norm() > COHERENCE_TOL {
        return MachineKind::FirstKind;
    }
    let gap = coeffs.rate_gap();
    if gap > RATE_GAP_TOL {
        MachineKind::SecondKind
    } else if gap < -RATE_GAP_TOL {
        MachineKind::Inverted
    } else {
        MachineKind::AtThreshold
    }
}
