//! Truncated single-mode Fock space, few-atom cluster bases, and the joint
//! atom–field interaction propagators of the kicked-cavity model.
//!
//! Conventions fixed here and relied on everywhere else in the crate:
//!
//! * `ħ = k_B = 1`, and the atomic transition is resonant with the cavity
//!   mode, so the interaction picture leaves only the exchange coupling.
//! * Joint operators act on `atoms ⊗ field`; the joint row index is
//!   `atom_index * fock_dim + photon_number`.
//! * The atomic product basis is ordered by excitation count (descending),
//!   ties broken by reading the pattern as a binary number with `e = 1`
//!   (descending). For three atoms this gives
//!   `eee, eeg, ege, gee, egg, geg, gge, ggg` at indices `0..8`.
//! * The top tenth of the Fock ladder (at least one level) is a guard band
//!   used to detect truncation leakage.
//!
//! The exchange coupling conserves the total excitation number (photons plus
//! excited atoms). Two consequences shape the implementation: propagators are
//! block diagonal over total-excitation manifolds of dimension at most `2^N`,
//! so the exact propagator costs a string of tiny eigenproblems rather than
//! one big one; and every atomic block `⟨i|U|j⟩` of a propagator is a single
//! shifted diagonal in the Fock basis ([`ShiftedDiag`]), which makes applying
//! an injection kick to a field density matrix an `O(dim²)` operation.

use std::cmp::Reverse;

use ndarray::Array2;
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::C64;

/// Largest supported cluster size.
pub const MAX_ATOMS: usize = 3;

/// Errors from Hilbert-space construction and propagator assembly.
#[derive(Debug, Error)]
pub enum HilbertError {
    /// The Fock truncation needs at least two levels.
    #[error("Fock dimension must be at least 2, got {0}")]
    FockDimTooSmall(usize),
    /// Cluster sizes other than 1, 2 or 3 atoms are not supported.
    #[error("cluster size must be 1, 2 or 3 atoms, got {0}")]
    UnsupportedClusterSize(usize),
    /// A matrix had the wrong dimension for the requested operation.
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    /// A density matrix failed a physicality check.
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
    /// Failure in an underlying linear-algebra kernel.
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

// ---------------------------------------------------------------------------
// Fock space
// ---------------------------------------------------------------------------

/// Truncated Fock space retaining the levels `|0⟩ … |dim-1⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockSpace {
    dim: usize,
}

impl FockSpace {
    /// Creates a truncated Fock space with `dim ≥ 2` levels.
    pub fn new(dim: usize) -> Result<Self, HilbertError> {
        if dim < 2 {
            return Err(HilbertError::FockDimTooSmall(dim));
        }
        Ok(Self { dim })
    }

    /// Number of retained levels.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of guard levels at the top of the ladder (a tenth of the
    /// space, at least one level).
    pub fn guard_levels(&self) -> usize {
        (self.dim / 10).max(1)
    }

    /// First Fock index belonging to the guard band.
    pub fn guard_start(&self) -> usize {
        self.dim - self.guard_levels()
    }

    /// Largest photon index whose propagator matrix elements are free of
    /// truncation-edge artifacts for a cluster moving at most `n_atoms`
    /// quanta per kick: indices `< guard_start − n_atoms` are trusted.
    pub fn trusted_photon_cutoff(&self, n_atoms: usize) -> usize {
        self.guard_start().saturating_sub(n_atoms)
    }

    /// Annihilation operator: `⟨n−1|a|n⟩ = √n`.
    pub fn annihilation(&self) -> Array2<C64> {
        let mut a = Array2::zeros((self.dim, self.dim));
        for n in 1..self.dim {
            a[[n - 1, n]] = C64::new((n as f64).sqrt(), 0.0);
        }
        a
    }

    /// Creation operator, the adjoint of [`FockSpace::annihilation`].
    pub fn creation(&self) -> Array2<C64> {
        let mut ad = Array2::zeros((self.dim, self.dim));
        for n in 1..self.dim {
            ad[[n, n - 1]] = C64::new((n as f64).sqrt(), 0.0);
        }
        ad
    }

    /// Photon-number operator `a†a`.
    pub fn number(&self) -> Array2<C64> {
        let mut n_op = Array2::zeros((self.dim, self.dim));
        for n in 0..self.dim {
            n_op[[n, n]] = C64::new(n as f64, 0.0);
        }
        n_op
    }

    /// Identity on the truncated space.
    pub fn identity(&self) -> Array2<C64> {
        Array2::from_shape_fn((self.dim, self.dim), |(i, j)| {
            if i == j {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    /// Vacuum density matrix `|0⟩⟨0|`.
    pub fn vacuum(&self) -> Array2<C64> {
        let mut rho = Array2::zeros((self.dim, self.dim));
        rho[[0, 0]] = C64::new(1.0, 0.0);
        rho
    }
}

// ---------------------------------------------------------------------------
// Atomic product basis
// ---------------------------------------------------------------------------

/// Ordered product basis for a cluster of 1–3 two-level atoms.
///
/// Each basis state is stored as a bit mask with atom 1 at the most
/// significant of the `n_atoms` bits and `e = 1`, so the label read left to
/// right equals the mask read as binary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomBasis {
    n_atoms: usize,
    masks: Vec<u8>,
}

impl AtomBasis {
    /// Builds the canonically ordered basis for `n_atoms ∈ {1, 2, 3}`.
    pub fn new(n_atoms: usize) -> Result<Self, HilbertError> {
        if !(1..=MAX_ATOMS).contains(&n_atoms) {
            return Err(HilbertError::UnsupportedClusterSize(n_atoms));
        }
        let mut masks: Vec<u8> = (0u8..(1 << n_atoms)).collect();
        masks.sort_by_key(|m| (Reverse(m.count_ones()), Reverse(*m)));
        Ok(Self { n_atoms, masks })
    }

    /// Number of atoms in the cluster.
    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// Basis size `2^N`.
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    /// True only for an empty basis (never: the constructor rejects `N = 0`).
    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Excitation bit mask of basis state `idx`.
    pub fn mask(&self, idx: usize) -> u8 {
        self.masks[idx]
    }

    /// Number of excited atoms in basis state `idx`.
    pub fn excitations(&self, idx: usize) -> usize {
        self.masks[idx].count_ones() as usize
    }

    /// Number of atoms whose level differs between basis states `i` and `j`.
    pub fn hamming(&self, i: usize, j: usize) -> usize {
        (self.masks[i] ^ self.masks[j]).count_ones() as usize
    }

    /// Label such as `"eeg"`, atom 1 leftmost.
    pub fn label(&self, idx: usize) -> String {
        let mask = self.masks[idx];
        (0..self.n_atoms)
            .map(|pos| {
                if mask >> (self.n_atoms - 1 - pos) & 1 == 1 {
                    'e'
                } else {
                    'g'
                }
            })
            .collect()
    }

    /// Index of the basis state with the given `e`/`g` label, if valid.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        if label.len() != self.n_atoms {
            return None;
        }
        let mut mask = 0u8;
        for ch in label.chars() {
            mask <<= 1;
            match ch {
                'e' => mask |= 1,
                'g' => {}
                _ => return None,
            }
        }
        self.masks.iter().position(|&m| m == mask)
    }
}

/// Field ladder factor attached to an atomic transition inside the exchange
/// coupling `P = a S₊ + a† S₋`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ladder {
    /// The atom gains an excitation and the field loses a photon (`a`).
    Lower,
    /// The atom loses an excitation and the field gains a photon (`a†`).
    Raise,
}

/// Field factor of `⟨i|P|j⟩`: `Some(Lower)` when `i` has one more excited
/// atom than `j` (single flip), `Some(Raise)` for the reverse single flip,
/// `None` otherwise.
fn exchange_element(basis: &AtomBasis, i: usize, j: usize) -> Option<Ladder> {
    if basis.hamming(i, j) != 1 {
        return None;
    }
    if basis.excitations(i) == basis.excitations(j) + 1 {
        Some(Ladder::Lower)
    } else if basis.excitations(j) == basis.excitations(i) + 1 {
        Some(Ladder::Raise)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Interaction Hamiltonian and dense propagators
// ---------------------------------------------------------------------------

/// Resonant exchange coupling `g Σ_j (a σ_j⁺ + a† σ_j⁻)` on `atoms ⊗ field`.
pub fn interaction_hamiltonian(
    n_atoms: usize,
    fock: FockSpace,
    g: f64,
) -> Result<Array2<C64>, HilbertError> {
    let basis = AtomBasis::new(n_atoms)?;
    let dim = fock.dim();
    let na = basis.len();
    let mut h = Array2::zeros((na * dim, na * dim));
    for i in 0..na {
        for j in 0..na {
            if exchange_element(&basis, i, j) == Some(Ladder::Lower) {
                // |i⟩⟨j| ⊗ a and its adjoint |j⟩⟨i| ⊗ a†.
                for p in 1..dim {
                    let v = C64::new(g * (p as f64).sqrt(), 0.0);
                    h[[i * dim + p - 1, j * dim + p]] += v;
                    h[[j * dim + p, i * dim + p - 1]] += v;
                }
            }
        }
    }
    Ok(h)
}

/// Unitary `exp(−i H τ)` of a Hermitian joint Hamiltonian, computed by
/// eigendecomposition. Errors on non-Hermitian input.
pub fn exact_propagator(h: &Array2<C64>, tau: f64) -> Result<Array2<C64>, HilbertError> {
    let (vals, vecs) = linalg::eigh(&h.view(), 1e-10)?;
    let n = vals.len();
    let mut scaled = vecs.clone();
    for (k, &lam) in vals.iter().enumerate() {
        let phase = C64::from_polar(1.0, -lam * tau);
        for r in 0..n {
            scaled[[r, k]] *= phase;
        }
    }
    let vdag = linalg::dagger(&vecs.view());
    Ok(linalg::mat_mul(&scaled.view(), &vdag.view()))
}

/// Analytic propagator truncated at second order in `g·τ`, as a dense joint
/// matrix. Matrix elements absent from the second-order expansion are exactly
/// zero. Logs a warning when `g_tau` exceeds 0.3, where the neglected
/// `O((gτ)³)` terms stop being small.
pub fn second_order_propagator(
    n_atoms: usize,
    fock: FockSpace,
    g_tau: f64,
) -> Result<Array2<C64>, HilbertError> {
    Ok(PropagatorBlocks::second_order(n_atoms, fock, g_tau)?.to_dense())
}

/// Unitary transformation from the atomic product basis to the collective
/// (Dicke) basis, for 2- or 3-atom clusters. Columns are the collective
/// states; conjugating the exchange coupling with the returned matrix makes
/// it block diagonal over the irreducible spin sectors (triplet ⊕ singlet
/// for two atoms, quadruplet ⊕ two doublets for three).
pub fn dicke_transform(n_atoms: usize) -> Result<Array2<C64>, HilbertError> {
    let r = |x: f64| C64::new(x, 0.0);
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    match n_atoms {
        2 => {
            let mut t = Array2::zeros((4, 4));
            t[[0, 0]] = r(1.0);
            t[[1, 1]] = r(s2);
            t[[1, 3]] = r(s2);
            t[[2, 1]] = r(s2);
            t[[2, 3]] = r(-s2);
            t[[3, 2]] = r(1.0);
            Ok(t)
        }
        3 => {
            let s3 = 1.0 / 3f64.sqrt();
            let s6 = 1.0 / 6f64.sqrt();
            let s23 = (2f64 / 3f64).sqrt();
            let mut t = Array2::zeros((8, 8));
            t[[0, 0]] = r(1.0);
            t[[1, 1]] = r(s3);
            t[[1, 6]] = r(-s23);
            t[[2, 1]] = r(s3);
            t[[2, 4]] = r(-s2);
            t[[2, 6]] = r(s6);
            t[[3, 1]] = r(s3);
            t[[3, 4]] = r(s2);
            t[[3, 6]] = r(s6);
            t[[4, 2]] = r(s3);
            t[[4, 5]] = r(-s2);
            t[[4, 7]] = r(-s6);
            t[[5, 2]] = r(s3);
            t[[5, 5]] = r(s2);
            t[[5, 7]] = r(-s6);
            t[[6, 2]] = r(s3);
            t[[6, 7]] = r(s23);
            t[[7, 3]] = r(1.0);
            Ok(t)
        }
        n => Err(HilbertError::UnsupportedClusterSize(n)),
    }
}

// ---------------------------------------------------------------------------
// Shifted-diagonal field operators and block propagators
// ---------------------------------------------------------------------------

/// A field operator of the form `Σ_p c_p |p+shift⟩⟨p|`: one shifted diagonal
/// in the Fock basis.
///
/// `coeff[p]` multiplies the transition from source level `p` to target
/// level `p + shift`; entries whose target lies outside the truncated ladder
/// are stored as zero, matching truncated dense operator algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedDiag {
    /// Photon-number change produced by the operator.
    pub shift: isize,
    /// Transition amplitudes indexed by source level.
    pub coeff: Vec<C64>,
}

impl ShiftedDiag {
    /// All-zero operator with the given shift.
    pub fn zeros(dim: usize, shift: isize) -> Self {
        Self {
            shift,
            coeff: vec![C64::new(0.0, 0.0); dim],
        }
    }

    /// Identity on the truncated ladder.
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: 0,
            coeff: vec![C64::new(1.0, 0.0); dim],
        }
    }

    /// Annihilation operator `a` (shift −1).
    pub fn lower(dim: usize) -> Self {
        let coeff = (0..dim).map(|p| C64::new((p as f64).sqrt(), 0.0)).collect();
        Self { shift: -1, coeff }
    }

    /// Creation operator `a†` (shift +1), clipped at the truncation edge.
    pub fn raise(dim: usize) -> Self {
        let coeff = (0..dim)
            .map(|p| {
                if p + 1 < dim {
                    C64::new(((p + 1) as f64).sqrt(), 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            })
            .collect();
        Self { shift: 1, coeff }
    }

    fn from_ladder(dim: usize, l: Ladder) -> Self {
        match l {
            Ladder::Lower => Self::lower(dim),
            Ladder::Raise => Self::raise(dim),
        }
    }

    /// Truncated space dimension.
    pub fn dim(&self) -> usize {
        self.coeff.len()
    }

    /// Operator product `self · rhs` (apply `rhs` first).
    pub fn compose(&self, rhs: &Self) -> Self {
        let dim = self.dim();
        debug_assert_eq!(dim, rhs.dim());
        let shift = self.shift + rhs.shift;
        let coeff = (0..dim)
            .map(|p| {
                let mid = p as isize + rhs.shift;
                if mid >= 0 && (mid as usize) < dim {
                    self.coeff[mid as usize] * rhs.coeff[p]
                } else {
                    C64::new(0.0, 0.0)
                }
            })
            .collect();
        Self { shift, coeff }
    }

    /// Adds `s · rhs`; both operands must carry the same shift.
    pub fn add_assign_scaled(&mut self, rhs: &Self, s: C64) {
        assert_eq!(
            self.shift, rhs.shift,
            "cannot add shifted diagonals with different shifts"
        );
        for (c, r) in self.coeff.iter_mut().zip(rhs.coeff.iter()) {
            *c += s * r;
        }
    }

    /// True when every stored amplitude is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.coeff.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }
}

/// Block decomposition of a joint propagator over the atomic basis.
///
/// The propagator is `Σ_{ij} |i⟩⟨j| ⊗ B_ij`, and every field block `B_ij` is
/// a single shifted diagonal with shift `excitations(j) − excitations(i)`
/// because the exchange coupling conserves the total excitation number.
#[derive(Debug, Clone)]
pub struct PropagatorBlocks {
    basis: AtomBasis,
    fock: FockSpace,
    blocks: Vec<Vec<ShiftedDiag>>,
}

impl PropagatorBlocks {
    fn block_shift(basis: &AtomBasis, i: usize, j: usize) -> isize {
        basis.excitations(j) as isize - basis.excitations(i) as isize
    }

    fn empty(basis: AtomBasis, fock: FockSpace) -> Self {
        let na = basis.len();
        let dim = fock.dim();
        let blocks = (0..na)
            .map(|i| {
                (0..na)
                    .map(|j| ShiftedDiag::zeros(dim, Self::block_shift(&basis, i, j)))
                    .collect()
            })
            .collect();
        Self {
            basis,
            fock,
            blocks,
        }
    }

    /// Analytic second-order propagator `1 − igτ P − ½(gτ)² P²`, assembled
    /// symbolically from the single-flip structure of the exchange coupling.
    pub fn second_order(
        n_atoms: usize,
        fock: FockSpace,
        g_tau: f64,
    ) -> Result<Self, HilbertError> {
        if g_tau > 0.3 {
            log::warn!(
                "second-order propagator requested at g·τ = {g_tau}; \
                 the neglected O((gτ)³) terms are no longer small"
            );
        }
        let basis = AtomBasis::new(n_atoms)?;
        let dim = fock.dim();
        let na = basis.len();
        let mut out = Self::empty(basis, fock);
        let minus_i_gt = C64::new(0.0, -g_tau);
        let minus_half_gt2 = C64::new(-0.5 * g_tau * g_tau, 0.0);
        for i in 0..na {
            out.blocks[i][i] = ShiftedDiag::identity(dim);
        }
        for i in 0..na {
            for j in 0..na {
                if let Some(l) = exchange_element(&out.basis, i, j) {
                    out.blocks[i][j]
                        .add_assign_scaled(&ShiftedDiag::from_ladder(dim, l), minus_i_gt);
                }
                // Second order: sum over two-step exchange paths i → k → j.
                for k in 0..na {
                    if let (Some(l1), Some(l2)) = (
                        exchange_element(&out.basis, i, k),
                        exchange_element(&out.basis, k, j),
                    ) {
                        let prod = ShiftedDiag::from_ladder(dim, l1)
                            .compose(&ShiftedDiag::from_ladder(dim, l2));
                        out.blocks[i][j].add_assign_scaled(&prod, minus_half_gt2);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Exact propagator `exp(−i gτ P)` on the truncated joint space,
    /// computed manifold by manifold: the total excitation number is
    /// conserved, so the propagator factorizes into eigenproblems of
    /// dimension at most `2^N`.
    pub fn exact(n_atoms: usize, fock: FockSpace, g_tau: f64) -> Result<Self, HilbertError> {
        let basis = AtomBasis::new(n_atoms)?;
        let dim = fock.dim();
        let na = basis.len();
        let mut out = Self::empty(basis, fock);
        for m in 0..(dim + n_atoms) {
            // Joint states (i, p) with p = m − excitations(i) inside the ladder.
            let members: Vec<usize> = (0..na)
                .filter(|&i| {
                    let e = out.basis.excitations(i);
                    m >= e && m - e < dim
                })
                .collect();
            if members.is_empty() {
                continue;
            }
            let s = members.len();
            let mut hm = Array2::<C64>::zeros((s, s));
            for (r, &i) in members.iter().enumerate() {
                for (c, &j) in members.iter().enumerate() {
                    let q = m - out.basis.excitations(j);
                    hm[[r, c]] = match exchange_element(&out.basis, i, j) {
                        Some(Ladder::Lower) => C64::new((q as f64).sqrt(), 0.0),
                        Some(Ladder::Raise) => C64::new((q as f64 + 1.0).sqrt(), 0.0),
                        None => C64::new(0.0, 0.0),
                    };
                }
            }
            let um = exact_propagator(&hm, g_tau)?;
            for (r, &i) in members.iter().enumerate() {
                for (c, &j) in members.iter().enumerate() {
                    let p_src = m - out.basis.excitations(j);
                    out.blocks[i][j].coeff[p_src] = um[[r, c]];
                }
            }
        }
        Ok(out)
    }

    /// Atomic basis the blocks are indexed by.
    pub fn basis(&self) -> &AtomBasis {
        &self.basis
    }

    /// Fock space the field blocks act on.
    pub fn fock(&self) -> FockSpace {
        self.fock
    }

    /// Field block `⟨i|U|j⟩`.
    pub fn block(&self, i: usize, j: usize) -> &ShiftedDiag {
        &self.blocks[i][j]
    }

    /// Assembles the dense joint matrix (atom-major indexing).
    pub fn to_dense(&self) -> Array2<C64> {
        let dim = self.fock.dim();
        let na = self.basis.len();
        let mut u = Array2::zeros((na * dim, na * dim));
        for i in 0..na {
            for j in 0..na {
                let b = &self.blocks[i][j];
                for p in 0..dim {
                    let t = p as isize + b.shift;
                    if t >= 0 && (t as usize) < dim {
                        u[[i * dim + t as usize, j * dim + p]] = b.coeff[p];
                    }
                }
            }
        }
        u
    }

    /// Kraus decomposition of the injection kick
    /// `ρ ↦ Tr_atoms[U (ρ_a ⊗ ρ) U†]` for an atomic state supplied in
    /// eigendecomposed form `(weight, eigenvector)`: the Kraus operators are
    /// `K_{kα} = Σ_i v_α[i] ⟨k|U|i⟩`, each a narrow band of shifted
    /// diagonals.
    pub fn kraus_set(&self, atom_eig: &[(f64, Vec<C64>)]) -> Result<KrausSet, HilbertError> {
        let na = self.basis.len();
        let dim = self.fock.dim();
        let mut ops = Vec::new();
        for (w, v) in atom_eig {
            if v.len() != na {
                return Err(HilbertError::DimensionMismatch {
                    expected: na,
                    found: v.len(),
                });
            }
            if *w <= 1e-14 {
                continue;
            }
            for k in 0..na {
                // Group Σ_i v[i]·B_ki by shift; shifts repeat across i with
                // equal excitation counts.
                let mut diags: Vec<ShiftedDiag> = Vec::new();
                for i in 0..na {
                    if v[i].norm_sqr() == 0.0 || self.blocks[k][i].is_zero() {
                        continue;
                    }
                    let b = &self.blocks[k][i];
                    match diags.iter_mut().find(|d| d.shift == b.shift) {
                        Some(d) => d.add_assign_scaled(b, v[i]),
                        None => {
                            let mut d = ShiftedDiag::zeros(dim, b.shift);
                            d.add_assign_scaled(b, v[i]);
                            diags.push(d);
                        }
                    }
                }
                diags.retain(|d| !d.is_zero());
                if !diags.is_empty() {
                    ops.push((*w, BandOperator { dim, diags }));
                }
            }
        }
        Ok(KrausSet { dim, ops })
    }
}

/// A sparse field operator stored as a sum of shifted diagonals.
#[derive(Debug, Clone)]
pub struct BandOperator {
    dim: usize,
    diags: Vec<ShiftedDiag>,
}

impl BandOperator {
    /// Accumulates `out += w · K ρ K†` using `scratch` for the intermediate
    /// product; all matrices are `dim × dim` and row-major contiguous.
    pub fn sandwich_add(
        &self,
        rho: &Array2<C64>,
        w: f64,
        out: &mut Array2<C64>,
        scratch: &mut Array2<C64>,
    ) {
        let dim = self.dim;
        scratch.fill(C64::new(0.0, 0.0));
        let rho_s = rho.as_slice().expect("contiguous rho");
        {
            let scr = scratch.as_slice_mut().expect("contiguous scratch");
            // scratch = K ρ: row p+s of scratch += c[p] · row p of ρ.
            for d in &self.diags {
                for p in 0..dim {
                    let c = d.coeff[p];
                    if c.re == 0.0 && c.im == 0.0 {
                        continue;
                    }
                    let t = (p as isize + d.shift) as usize;
                    let src = &rho_s[p * dim..(p + 1) * dim];
                    let dst = &mut scr[t * dim..(t + 1) * dim];
                    for (o, r) in dst.iter_mut().zip(src.iter()) {
                        *o += c * r;
                    }
                }
            }
        }
        let scr = scratch.as_slice().expect("contiguous scratch");
        let out_s = out.as_slice_mut().expect("contiguous out");
        let wc = C64::new(w, 0.0);
        // out += w · scratch · K†: col q of scratch feeds col q+s of out.
        for d in &self.diags {
            for q in 0..dim {
                let c = d.coeff[q];
                if c.re == 0.0 && c.im == 0.0 {
                    continue;
                }
                let t = (q as isize + d.shift) as usize;
                let f = wc * c.conj();
                for r in 0..dim {
                    out_s[r * dim + t] += scr[r * dim + q] * f;
                }
            }
        }
    }

    /// Dense matrix form (for tests and small-scale checks).
    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::zeros((self.dim, self.dim));
        for d in &self.diags {
            for p in 0..self.dim {
                let t = p as isize + d.shift;
                if t >= 0 && (t as usize) < self.dim {
                    m[[t as usize, p]] += d.coeff[p];
                }
            }
        }
        m
    }
}

/// Kraus form of one injection kick for a fixed cluster state and
/// propagator; applying it advances the field density matrix by one cluster
/// transit in `O(dim²)`.
#[derive(Debug, Clone)]
pub struct KrausSet {
    dim: usize,
    ops: Vec<(f64, BandOperator)>,
}

impl KrausSet {
    /// Field dimension the kick acts on.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Applies the kick: `ρ ↦ Σ w_k K_k ρ K_k†`.
    pub fn apply(&self, rho: &Array2<C64>) -> Array2<C64> {
        let mut out = Array2::zeros((self.dim, self.dim));
        let mut scratch = Array2::zeros((self.dim, self.dim));
        for (w, k) in &self.ops {
            k.sandwich_add(rho, *w, &mut out, &mut scratch);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Joint states, tensor products, partial traces
// ---------------------------------------------------------------------------

/// Tensor product `ρ_atoms ⊗ ρ_field` in atom-major joint indexing.
pub fn tensor_atoms_field(rho_atoms: &Array2<C64>, rho_field: &Array2<C64>) -> Array2<C64> {
    linalg::kron(&rho_atoms.view(), &rho_field.view())
}

/// Partial trace over the atomic factor of a joint matrix, returning the
/// `dim × dim` field matrix.
pub fn partial_trace_atoms(joint: &Array2<C64>, dim: usize) -> Array2<C64> {
    let total = joint.nrows();
    let na = total / dim;
    let mut rho = Array2::zeros((dim, dim));
    for k in 0..na {
        for p in 0..dim {
            for q in 0..dim {
                rho[[p, q]] += joint[[k * dim + p, k * dim + q]];
            }
        }
    }
    rho
}

/// Partial trace over the field factor, returning the atomic matrix.
pub fn partial_trace_field(joint: &Array2<C64>, dim: usize) -> Array2<C64> {
    let total = joint.nrows();
    let na = total / dim;
    let mut rho = Array2::zeros((na, na));
    for i in 0..na {
        for j in 0..na {
            for p in 0..dim {
                rho[[i, j]] += joint[[i * dim + p, j * dim + p]];
            }
        }
    }
    rho
}

/// Validated joint atom–field density matrix.
#[derive(Debug, Clone)]
pub struct JointState {
    /// Cluster size.
    pub n_atoms: usize,
    /// Field truncation.
    pub fock: FockSpace,
    /// Dense joint matrix, `2^N·dim` square, atom-major.
    pub matrix: Array2<C64>,
}

impl JointState {
    /// Tolerance for Hermiticity and trace deviations.
    pub const STATE_TOL: f64 = 1e-10;

    /// Wraps a joint matrix after checking dimension, Hermiticity and trace.
    /// Positivity is checked separately by [`JointState::validate_positivity`]
    /// because it requires a full eigendecomposition.
    pub fn new(n_atoms: usize, fock: FockSpace, matrix: Array2<C64>) -> Result<Self, HilbertError> {
        if !(1..=MAX_ATOMS).contains(&n_atoms) {
            return Err(HilbertError::UnsupportedClusterSize(n_atoms));
        }
        let expected = (1 << n_atoms) * fock.dim();
        if matrix.nrows() != expected || matrix.ncols() != expected {
            return Err(HilbertError::DimensionMismatch {
                expected,
                found: matrix.nrows(),
            });
        }
        let herm = linalg::hermiticity_deviation(&matrix.view());
        if herm > Self::STATE_TOL {
            return Err(HilbertError::InvalidState(format!(
                "Hermiticity deviation {herm:.3e} exceeds {:.1e}",
                Self::STATE_TOL
            )));
        }
        let tr: C64 = (0..expected).map(|i| matrix[[i, i]]).sum();
        if (tr - C64::new(1.0, 0.0)).norm() > Self::STATE_TOL {
            return Err(HilbertError::InvalidState(format!(
                "trace {tr} deviates from one beyond {:.1e}",
                Self::STATE_TOL
            )));
        }
        Ok(Self {
            n_atoms,
            fock,
            matrix,
        })
    }

    /// Builds the product state `ρ_atoms ⊗ ρ_field`.
    pub fn from_product(
        rho_atoms: &Array2<C64>,
        rho_field: &Array2<C64>,
        fock: FockSpace,
    ) -> Result<Self, HilbertError> {
        let na = rho_atoms.nrows();
        let n_atoms = match na {
            2 => 1,
            4 => 2,
            8 => 3,
            _ => return Err(HilbertError::UnsupportedClusterSize(0)),
        };
        if rho_field.nrows() != fock.dim() || rho_field.ncols() != fock.dim() {
            return Err(HilbertError::DimensionMismatch {
                expected: fock.dim(),
                found: rho_field.nrows(),
            });
        }
        Self::new(n_atoms, fock, tensor_atoms_field(rho_atoms, rho_field))
    }

    /// Checks that the smallest eigenvalue is at least `−tol`.
    pub fn validate_positivity(&self, tol: f64) -> Result<(), HilbertError> {
        let vals = linalg::eigvalsh(&self.matrix.view(), Self::STATE_TOL)?;
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -tol {
            return Err(HilbertError::InvalidState(format!(
                "negative eigenvalue {min:.3e} below −{tol:.1e}"
            )));
        }
        Ok(())
    }

    /// Field density matrix after tracing out the atoms.
    pub fn trace_out_atoms(&self) -> Array2<C64> {
        partial_trace_atoms(&self.matrix, self.fock.dim())
    }

    /// Atomic density matrix after tracing out the field.
    pub fn trace_out_field(&self) -> Array2<C64> {
        partial_trace_field(&self.matrix, self.fock.dim())
    }
}
