//! Cluster ("fuel") states: construction of the named catalog, validation,
//! phase averaging, and classification of density-matrix entries by the role
//! they play in the induced cavity dynamics.
//!
//! A cluster state is the density matrix `a_ij` of the 1–3 atoms injected
//! into the cavity, written in the ordered product basis of
//! [`crate::hilbert::AtomBasis`]. Every entry of the matrix belongs to
//! exactly one [`CoherenceClass`]; the classes predict which coefficient of
//! the induced master equation the entry feeds (thermal rates, coherent
//! drive, or two-photon squeezing) and are cross-checked against the
//! coefficient tables in `generator`.

use ndarray::Array2;
use thiserror::Error;

use crate::hilbert::AtomBasis;
use crate::linalg::{self, LinalgError};
use crate::C64;

/// Tolerance for Hermiticity, trace and positivity of cluster states.
pub const STATE_TOL: f64 = 1e-10;

/// Errors from cluster-state construction and classification.
#[derive(Debug, Error)]
pub enum ClusterError {
    /// Cluster sizes other than 1, 2 or 3 atoms are not supported.
    #[error("cluster size must be 1, 2 or 3 atoms, got {0}")]
    UnsupportedClusterSize(usize),
    /// A matrix or amplitude vector had the wrong dimension.
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    /// A basis index was outside `0..2^N`.
    #[error("basis index {index} out of range for a {n_atoms}-atom cluster")]
    IndexOutOfRange { index: usize, n_atoms: usize },
    /// A named-state parameter fell outside its declared range.
    #[error("parameter {name} = {value} outside allowed range {range}")]
    ParameterOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    /// A custom pure state was not normalized.
    #[error("amplitude vector norm deviates from one by {0:.3e}")]
    NotNormalized(f64),
    /// A matrix failed the density-matrix checks.
    #[error("invalid cluster state: {0}")]
    InvalidState(String),
    /// Failure in an underlying linear-algebra kernel.
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn atom_basis(n_atoms: usize) -> Result<AtomBasis, ClusterError> {
    AtomBasis::new(n_atoms).map_err(|_| ClusterError::UnsupportedClusterSize(n_atoms))
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Deviation magnitudes of a candidate cluster density matrix.
#[derive(Debug, Clone, Copy)]
pub struct ValidationReport {
    /// Largest entry of `M − M†`.
    pub hermiticity_deviation: f64,
    /// `|tr M − 1|`.
    pub trace_deviation: f64,
    /// Smallest eigenvalue of the Hermitian part.
    pub min_eigenvalue: f64,
}

impl ValidationReport {
    /// True when every deviation is within [`STATE_TOL`].
    pub fn is_valid(&self) -> bool {
        self.hermiticity_deviation <= STATE_TOL
            && self.trace_deviation <= STATE_TOL
            && self.min_eigenvalue >= -STATE_TOL
    }

    fn describe(&self) -> String {
        format!(
            "hermiticity deviation {:.3e}, trace deviation {:.3e}, min eigenvalue {:.3e}",
            self.hermiticity_deviation, self.trace_deviation, self.min_eigenvalue
        )
    }
}

/// Measures how far `matrix` is from a valid `n_atoms`-cluster density
/// matrix. Errors only on a dimension mismatch; all physicality violations
/// are reported with magnitudes instead of failing.
pub fn validate(n_atoms: usize, matrix: &Array2<C64>) -> Result<ValidationReport, ClusterError> {
    let basis = atom_basis(n_atoms)?;
    let n = basis.len();
    if matrix.nrows() != n || matrix.ncols() != n {
        return Err(ClusterError::DimensionMismatch {
            expected: n,
            found: matrix.nrows(),
        });
    }
    let herm = linalg::hermiticity_deviation(&matrix.view());
    let tr: C64 = (0..n).map(|i| matrix[[i, i]]).sum();
    let trace_dev = (tr - C64::new(1.0, 0.0)).norm();
    // Eigenvalues of the Hermitian part; for a nearly Hermitian matrix this
    // is the meaningful positivity measure.
    let hermitized = Array2::from_shape_fn((n, n), |(i, j)| {
        (matrix[[i, j]] + matrix[[j, i]].conj()) * 0.5
    });
    let vals = linalg::eigvalsh(&hermitized.view(), 1e-6)?;
    let min_eigenvalue = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ValidationReport {
        hermiticity_deviation: herm,
        trace_deviation: trace_dev,
        min_eigenvalue,
    })
}

// ---------------------------------------------------------------------------
// Cluster states
// ---------------------------------------------------------------------------

/// Validated density matrix of an injected atom cluster.
#[derive(Debug, Clone)]
pub struct ClusterState {
    basis: AtomBasis,
    matrix: Array2<C64>,
}

impl ClusterState {
    /// Wraps a matrix after checking Hermiticity, trace and positivity
    /// within [`STATE_TOL`]. The matrix is stored as given (no silent
    /// adjustment); use [`ClusterState::from_matrix`] for symmetrization.
    pub fn new(n_atoms: usize, matrix: Array2<C64>) -> Result<Self, ClusterError> {
        let report = validate(n_atoms, &matrix)?;
        if !report.is_valid() {
            return Err(ClusterError::InvalidState(report.describe()));
        }
        Ok(Self {
            basis: atom_basis(n_atoms)?,
            matrix,
        })
    }

    /// Projector onto a pure state given by amplitudes in the ordered basis.
    /// The amplitudes must be normalized within [`STATE_TOL`].
    pub fn from_pure(n_atoms: usize, amplitudes: &[C64]) -> Result<Self, ClusterError> {
        let basis = atom_basis(n_atoms)?;
        let n = basis.len();
        if amplitudes.len() != n {
            return Err(ClusterError::DimensionMismatch {
                expected: n,
                found: amplitudes.len(),
            });
        }
        let norm_sq: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        let dev = (norm_sq.sqrt() - 1.0).abs();
        if dev > STATE_TOL {
            return Err(ClusterError::NotNormalized(dev));
        }
        let matrix =
            Array2::from_shape_fn((n, n), |(i, j)| amplitudes[i] * amplitudes[j].conj());
        Self::new(n_atoms, matrix)
    }

    /// Accepts a possibly non-Hermitian matrix, symmetrizes it to
    /// `(M + M†)/2`, validates the result, and reports the size of the
    /// adjustment (largest entry of `M − M†`, zero for Hermitian input).
    pub fn from_matrix(
        n_atoms: usize,
        matrix: Array2<C64>,
    ) -> Result<(Self, f64), ClusterError> {
        let basis = atom_basis(n_atoms)?;
        let n = basis.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(ClusterError::DimensionMismatch {
                expected: n,
                found: matrix.nrows(),
            });
        }
        let adjustment = linalg::hermiticity_deviation(&matrix.view());
        let symmetrized = Array2::from_shape_fn((n, n), |(i, j)| {
            (matrix[[i, j]] + matrix[[j, i]].conj()) * 0.5
        });
        Ok((Self::new(n_atoms, symmetrized)?, adjustment))
    }

    /// Number of atoms in the cluster.
    pub fn n_atoms(&self) -> usize {
        self.basis.n_atoms()
    }

    /// Matrix dimension `2^N`.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// The ordered basis the matrix is written in.
    pub fn basis(&self) -> &AtomBasis {
        &self.basis
    }

    /// The density matrix.
    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    /// Entry `a_ij` (0-based indices in the ordered basis).
    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.matrix[[i, j]]
    }
}

/// Returns the state with every off-diagonal entry zeroed (diagonal kept):
/// the classically correlated counterpart with all coherences erased.
pub fn phase_average(state: &ClusterState) -> ClusterState {
    let n = state.dim();
    let matrix = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            state.matrix[[i, j]]
        } else {
            C64::new(0.0, 0.0)
        }
    });
    ClusterState {
        basis: state.basis.clone(),
        matrix,
    }
}

// ---------------------------------------------------------------------------
// Basis labels and coherence classification
// ---------------------------------------------------------------------------

/// A labeled position in the ordered cluster basis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisLabel {
    /// Position in the fixed ordering.
    pub index: usize,
    /// Excitation pattern, atom 1 leftmost (`e` excited, `g` ground).
    pub bits: String,
    /// Number of `e`'s in `bits`.
    pub excitations: usize,
}

/// The labeled basis for an `n_atoms` cluster, in order.
pub fn basis_labels(n_atoms: usize) -> Result<Vec<BasisLabel>, ClusterError> {
    let basis = atom_basis(n_atoms)?;
    Ok((0..basis.len())
        .map(|index| BasisLabel {
            index,
            bits: basis.label(index),
            excitations: basis.excitations(index),
        })
        .collect())
}

/// Role of a cluster-matrix entry in the induced cavity dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoherenceClass {
    /// Diagonal entry: an occupation probability.
    Population,
    /// Coherence between states of equal excitation number: feeds only the
    /// absorption/emission rates (thermalization).
    HeatExchange,
    /// Single-flip coherence between states one excitation apart: acts as a
    /// coherent drive on the field.
    Displacement,
    /// Coherence between states two excitations apart: generates two-photon
    /// (squeezing) terms.
    Squeezing,
    /// Entry that does not enter the second-order master equation.
    Ineffective,
}

impl CoherenceClass {
    /// Display name.
    pub fn name(&self) -> &'static str {
        match self {
            CoherenceClass::Population => "population",
            CoherenceClass::HeatExchange => "heat-exchange",
            CoherenceClass::Displacement => "displacement",
            CoherenceClass::Squeezing => "squeezing",
            CoherenceClass::Ineffective => "ineffective",
        }
    }
}

/// Classifies entry `(i, j)` of an `n_atoms`-cluster density matrix.
///
/// With `d` the excitation-number difference and `h` the number of atoms
/// whose level differs: the diagonal is `Population`; `d = 0` is
/// `HeatExchange`; `d = 1` with a single flip is `Displacement`; `d = 2` is
/// `Squeezing`; everything else (including single-excitation differences
/// spread over three flips) is `Ineffective`.
pub fn classify_entry(
    i: usize,
    j: usize,
    n_atoms: usize,
) -> Result<CoherenceClass, ClusterError> {
    let basis = atom_basis(n_atoms)?;
    for idx in [i, j] {
        if idx >= basis.len() {
            return Err(ClusterError::IndexOutOfRange {
                index: idx,
                n_atoms,
            });
        }
    }
    if i == j {
        return Ok(CoherenceClass::Population);
    }
    let ei = basis.excitations(i);
    let ej = basis.excitations(j);
    let d = ei.abs_diff(ej);
    let h = basis.hamming(i, j);
    Ok(match (d, h) {
        (0, _) => CoherenceClass::HeatExchange,
        (1, 1) => CoherenceClass::Displacement,
        (2, _) => CoherenceClass::Squeezing,
        _ => CoherenceClass::Ineffective,
    })
}

// ---------------------------------------------------------------------------
// Named catalog
// ---------------------------------------------------------------------------

/// The named fuel states exercised throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NamedState {
    /// Two-atom superposition `cosθ|gg⟩ + sinθ|ee⟩` with `0 ≤ θ < π/4`;
    /// its only coherence is a squeezing coherence.
    TwoAtomSqueeze {
        /// Mixing angle.
        theta: f64,
    },
    /// General single-excitation three-atom superposition
    /// `cosθ cos(ψ/2)|egg⟩ + sinθ cos(ψ/2) e^{iφ}|geg⟩ + sin(ψ/2) e^{iδ}|gge⟩`.
    WGeneral {
        /// Weight angle between the first two components.
        theta: f64,
        /// Weight angle of the third component.
        psi: f64,
        /// Phase of the second component.
        phi: f64,
        /// Phase of the third component.
        delta: f64,
    },
    /// Symmetric single-excitation state `(|egg⟩+|geg⟩+|gge⟩)/√3`, built
    /// with exact rational entries `1/3`.
    WSymmetric,
    /// Generalized three-atom superposition `cos(θ/2)|eee⟩ + sin(θ/2)|ggg⟩`
    /// with `0 ≤ θ ≤ π`.
    GhzGeneral {
        /// Mixing angle.
        theta: f64,
    },
    /// Equal superposition `(|eee⟩+|ggg⟩)/√2`, built with exact entries `1/2`.
    GhzSymmetric,
    /// Symmetric double-excitation state `(|eeg⟩+|ege⟩+|gee⟩)/√3`, built
    /// with exact rational entries `1/3`.
    EState,
    /// Mixture `(1/2+ε)|W⟩⟨W| + (1/2−ε)|E⟩⟨E|` with `0 ≤ ε ≤ 1/2`.
    WeMixture {
        /// Mixing imbalance toward the single-excitation component.
        epsilon: f64,
    },
    /// All atoms in the ground state.
    Ground {
        /// Cluster size.
        n_atoms: usize,
    },
    /// All atoms excited.
    Excited {
        /// Cluster size.
        n_atoms: usize,
    },
}

/// Default imbalance for [`NamedState::WeMixture`].
pub const WE_MIXTURE_DEFAULT_EPSILON: f64 = 0.01;

impl NamedState {
    /// Cluster size of the named state.
    pub fn n_atoms(&self) -> usize {
        match self {
            NamedState::TwoAtomSqueeze { .. } => 2,
            NamedState::Ground { n_atoms } | NamedState::Excited { n_atoms } => *n_atoms,
            _ => 3,
        }
    }
}

/// Fills a triangle of `matrix`: diagonal and all mutual coherences of
/// `indices` set to `value`.
fn fill_uniform_block(matrix: &mut Array2<C64>, indices: &[usize], value: f64) {
    for &i in indices {
        for &j in indices {
            matrix[[i, j]] = C64::new(value, 0.0);
        }
    }
}

/// Builds a state from the named catalog.
///
/// States with exact rational entries (the symmetric single- and
/// double-excitation states, the balanced two-branch superposition, and the
/// mixture of the two triangles) are constructed from literal fractions so
/// that downstream coefficient sums reproduce their rational values exactly
/// in floating point.
pub fn make_named_state(name: NamedState) -> Result<ClusterState, ClusterError> {
    match name {
        NamedState::TwoAtomSqueeze { theta } => {
            if !(0.0..std::f64::consts::FRAC_PI_4).contains(&theta) {
                return Err(ClusterError::ParameterOutOfRange {
                    name: "theta",
                    value: theta,
                    range: "[0, π/4)",
                });
            }
            // Basis order ee, eg, ge, gg.
            let amps = [
                C64::new(theta.sin(), 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(theta.cos(), 0.0),
            ];
            ClusterState::from_pure(2, &amps)
        }
        NamedState::WGeneral {
            theta,
            psi,
            phi,
            delta,
        } => {
            let c2 = (psi / 2.0).cos();
            let mut amps = [C64::new(0.0, 0.0); 8];
            // egg = 4, geg = 5, gge = 6 in the ordered basis.
            amps[4] = C64::new(theta.cos() * c2, 0.0);
            amps[5] = C64::from_polar(theta.sin() * c2, phi);
            amps[6] = C64::from_polar((psi / 2.0).sin(), delta);
            ClusterState::from_pure(3, &amps)
        }
        NamedState::WSymmetric => {
            let mut m = Array2::zeros((8, 8));
            fill_uniform_block(&mut m, &[4, 5, 6], 1.0 / 3.0);
            ClusterState::new(3, m)
        }
        NamedState::GhzGeneral { theta } => {
            if !(0.0..=std::f64::consts::PI).contains(&theta) {
                return Err(ClusterError::ParameterOutOfRange {
                    name: "theta",
                    value: theta,
                    range: "[0, π]",
                });
            }
            let mut amps = [C64::new(0.0, 0.0); 8];
            amps[0] = C64::new((theta / 2.0).cos(), 0.0);
            amps[7] = C64::new((theta / 2.0).sin(), 0.0);
            ClusterState::from_pure(3, &amps)
        }
        NamedState::GhzSymmetric => {
            let mut m = Array2::zeros((8, 8));
            fill_uniform_block(&mut m, &[0, 7], 0.5);
            ClusterState::new(3, m)
        }
        NamedState::EState => {
            let mut m = Array2::zeros((8, 8));
            fill_uniform_block(&mut m, &[1, 2, 3], 1.0 / 3.0);
            ClusterState::new(3, m)
        }
        NamedState::WeMixture { epsilon } => {
            if !(0.0..=0.5).contains(&epsilon) {
                return Err(ClusterError::ParameterOutOfRange {
                    name: "epsilon",
                    value: epsilon,
                    range: "[0, 1/2]",
                });
            }
            // Correctly rounded single division per entry keeps the
            // coefficient sums exactly equal to 7/2 ∓ ε downstream.
            let w_entry = (0.5 + epsilon) / 3.0;
            let e_entry = (0.5 - epsilon) / 3.0;
            let mut m = Array2::zeros((8, 8));
            fill_uniform_block(&mut m, &[4, 5, 6], w_entry);
            fill_uniform_block(&mut m, &[1, 2, 3], e_entry);
            ClusterState::new(3, m)
        }
        NamedState::Ground { n_atoms } => {
            let basis = atom_basis(n_atoms)?;
            let n = basis.len();
            let mut m = Array2::zeros((n, n));
            m[[n - 1, n - 1]] = C64::new(1.0, 0.0);
            ClusterState::new(n_atoms, m)
        }
        NamedState::Excited { n_atoms } => {
            let basis = atom_basis(n_atoms)?;
            let n = basis.len();
            let mut m = Array2::zeros((n, n));
            m[[0, 0]] = C64::new(1.0, 0.0);
            ClusterState::new(n_atoms, m)
        }
    }
}
