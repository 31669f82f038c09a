//! Small dense complex linear-algebra kernels.
//!
//! Everything here works on row-major `ndarray` arrays of [`C64`]. The
//! matrices this crate meets are modest (a few hundred rows for field
//! operators, a few thousand for vectorized superoperators), so plain
//! partial-pivot LU, cyclic Jacobi for Hermitian eigenproblems, and
//! scaling-and-squaring for the matrix exponential are accurate and fast
//! enough; no external BLAS/LAPACK backend is required.

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

use crate::C64;

/// Errors from the dense kernels.
#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: left is {left}, right is {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("matrix is numerically singular (pivot {pivot:.3e} below tolerance)")]
    Singular { pivot: f64 },
    #[error("matrix is not Hermitian (max |A - A^dag| entry {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("eigensolver failed to converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
}

/// Conjugate transpose.
pub fn dagger(a: &ArrayView2<C64>) -> Array2<C64> {
    let (rows, cols) = a.dim();
    Array2::from_shape_fn((cols, rows), |(i, j)| a[[j, i]].conj())
}

/// Kronecker product `a (x) b`.
pub fn kron(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Frobenius norm.
pub fn frobenius_norm(a: &ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest entry magnitude.
pub fn max_abs(a: &ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Infinity norm (max absolute row sum).
pub fn inf_norm(a: &ArrayView2<C64>) -> f64 {
    let mut best = 0.0_f64;
    for row in a.rows() {
        let s: f64 = row.iter().map(|z| z.norm()).sum();
        best = best.max(s);
    }
    best
}

/// Max entry magnitude of `A - A^dag`; zero for exactly Hermitian input.
pub fn hermiticity_deviation(a: &ArrayView2<C64>) -> f64 {
    let n = a.nrows();
    let mut dev = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    dev
}

/// `out -= a . b`, the accumulation primitive of the block solvers.
///
/// Plain i-k-j loop order so the innermost pass runs over contiguous
/// rows of both `b` and `out`.
pub fn gemm_sub_into(out: &mut Array2<C64>, a: &ArrayView2<C64>, b: &ArrayView2<C64>) {
    let (m, ka) = a.dim();
    let (kb, n) = b.dim();
    assert_eq!(ka, kb, "gemm_sub_into: inner dimensions differ");
    assert_eq!(out.dim(), (m, n), "gemm_sub_into: output shape differs");
    let a_s = a.as_standard_layout();
    let b_s = b.as_standard_layout();
    let a_sl = a_s.as_slice().expect("standard layout");
    let b_sl = b_s.as_slice().expect("standard layout");
    let out_sl = out.as_slice_mut().expect("gemm_sub_into: output not contiguous");
    for i in 0..m {
        let out_row = &mut out_sl[i * n..(i + 1) * n];
        for k in 0..ka {
            let aik = a_sl[i * ka + k];
            if aik == C64::new(0.0, 0.0) {
                continue;
            }
            let b_row = &b_sl[k * n..(k + 1) * n];
            for j in 0..n {
                out_row[j] -= aik * b_row[j];
            }
        }
    }
}

/// `a . b` via [`gemm_sub_into`].
pub fn mat_mul(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> Array2<C64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    gemm_sub_into(&mut out, a, b);
    out.mapv_inplace(|z| -z);
    out
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Array2<C64>,
    /// Row swapped with row `k` at elimination step `k`.
    piv: Vec<usize>,
    /// Smallest pivot magnitude relative to the largest matrix entry.
    pub min_pivot_ratio: f64,
}

impl Lu {
    /// Factor `a`. Fails only on exactly zero pivots; near-singular
    /// systems factor fine and are reported via `min_pivot_ratio`.
    pub fn new(a: Array2<C64>) -> Result<Self, LinalgError> {
        let (rows, cols) = a.dim();
        if rows != cols {
            return Err(LinalgError::NonSquare { rows, cols });
        }
        let n = rows;
        let scale = max_abs(&a.view()).max(f64::MIN_POSITIVE);
        let mut lu = a.as_standard_layout().into_owned();
        let mut piv = vec![0usize; n];
        let mut min_pivot = f64::INFINITY;
        {
            let m = lu.as_slice_mut().expect("standard layout");
            for k in 0..n {
                let mut best = k;
                let mut best_mag = m[k * n + k].norm();
                for i in (k + 1)..n {
                    let mag = m[i * n + k].norm();
                    if mag > best_mag {
                        best = i;
                        best_mag = mag;
                    }
                }
                piv[k] = best;
                if best != k {
                    for j in 0..n {
                        m.swap(k * n + j, best * n + j);
                    }
                }
                let pivot = m[k * n + k];
                min_pivot = min_pivot.min(best_mag);
                if best_mag == 0.0 {
                    return Err(LinalgError::Singular { pivot: 0.0 });
                }
                let inv = C64::new(1.0, 0.0) / pivot;
                for i in (k + 1)..n {
                    let factor = m[i * n + k] * inv;
                    m[i * n + k] = factor;
                    if factor != C64::new(0.0, 0.0) {
                        let (head, tail) = m.split_at_mut((i) * n);
                        let row_k = &head[k * n..k * n + n];
                        let row_i = &mut tail[..n];
                        for j in (k + 1)..n {
                            row_i[j] -= factor * row_k[j];
                        }
                    }
                }
            }
        }
        Ok(Lu {
            lu,
            piv,
            min_pivot_ratio: min_pivot / scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    /// Solve `A x = b` in place for every column of `b`.
    pub fn solve_in_place(&self, b: &mut Array2<C64>) {
        let n = self.dim();
        assert_eq!(b.nrows(), n, "solve_in_place: rhs has wrong row count");
        let ncols = b.ncols();
        let m = self.lu.as_slice().expect("standard layout");
        // Apply row permutation.
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                for j in 0..ncols {
                    let t = b[[k, j]];
                    b[[k, j]] = b[[p, j]];
                    b[[p, j]] = t;
                }
            }
        }
        // Forward substitution with unit lower triangle.
        for i in 1..n {
            for k in 0..i {
                let l = m[i * n + k];
                if l != C64::new(0.0, 0.0) {
                    for j in 0..ncols {
                        let t = l * b[[k, j]];
                        b[[i, j]] -= t;
                    }
                }
            }
        }
        // Back substitution.
        for i in (0..n).rev() {
            let inv = C64::new(1.0, 0.0) / m[i * n + i];
            for j in 0..ncols {
                b[[i, j]] *= inv;
            }
            for k in 0..i {
                let u = m[k * n + i];
                if u != C64::new(0.0, 0.0) {
                    for j in 0..ncols {
                        let t = u * b[[i, j]];
                        b[[k, j]] -= t;
                    }
                }
            }
        }
    }

    /// Solve for a single right-hand side vector.
    pub fn solve_vec(&self, b: &Array1<C64>) -> Array1<C64> {
        let n = self.dim();
        let mut col = Array2::zeros((n, 1));
        for i in 0..n {
            col[[i, 0]] = b[i];
        }
        self.solve_in_place(&mut col);
        Array1::from_iter(col.column(0).iter().copied())
    }
}

/// Hermitian eigendecomposition `A = V diag(w) V^dag` by cyclic Jacobi.
///
/// Returns eigenvalues ascending with matching eigenvector columns.
/// Rejects inputs whose Hermiticity deviation exceeds `herm_tol`
/// (relative to the largest entry).
pub fn eigh(a: &ArrayView2<C64>, herm_tol: f64) -> Result<(Array1<f64>, Array2<C64>), LinalgError> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(LinalgError::NonSquare { rows, cols });
    }
    let n = rows;
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let dev = hermiticity_deviation(a);
    if dev > herm_tol * scale {
        return Err(LinalgError::NotHermitian { deviation: dev });
    }
    // Work on the exactly Hermitian average so rounding asymmetry in the
    // input cannot leak into complex eigenvalues.
    let mut m = Array2::from_shape_fn((n, n), |(i, j)| (a[[i, j]] + a[[j, i]].conj()) * 0.5);
    let mut v = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let off = |m: &Array2<C64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * m[[i, j]].norm_sqr();
            }
        }
        s.sqrt()
    };
    let fro = frobenius_norm(&m.view()).max(f64::MIN_POSITIVE);
    let target = 1e-14 * fro;
    let max_sweeps = 60;
    let mut converged = false;
    for _sweep in 0..max_sweeps {
        if off(&m) <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let z = m[[p, q]];
                let r = z.norm();
                if r <= 1e-300 {
                    continue;
                }
                // Phase that makes the (p,q) entry real, then a real
                // Jacobi rotation that annihilates it.
                let phase = z / r;
                let app = m[[p, p]].re;
                let aqq = m[[q, q]].re;
                let theta = (aqq - app) / (2.0 * r);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Column rotation G: col_p <- c*col_p - s*conj(phase)*col_q,
                //                    col_q <- s*phase*col_p + c*col_q.
                let sp = phase.conj() * s;
                let spc = phase * s;
                for i in 0..n {
                    let mip = m[[i, p]];
                    let miq = m[[i, q]];
                    m[[i, p]] = mip * c - miq * sp;
                    m[[i, q]] = mip * spc + miq * c;
                }
                for j in 0..n {
                    let mpj = m[[p, j]];
                    let mqj = m[[q, j]];
                    m[[p, j]] = mpj * c - mqj * sp.conj();
                    m[[q, j]] = mpj * spc.conj() + mqj * c;
                }
                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = vip * c - viq * sp;
                    v[[i, q]] = vip * spc + viq * c;
                }
            }
        }
    }
    if !converged && off(&m) > target * 10.0 {
        return Err(LinalgError::NoConvergence { sweeps: max_sweeps });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[[i, i]].re).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).expect("finite eigenvalues"));
    let w = Array1::from_iter(order.iter().map(|&i| diag[i]));
    let vecs = Array2::from_shape_fn((n, n), |(i, j)| v[[i, order[j]]]);
    Ok((w, vecs))
}

/// Eigenvalues only, ascending.
pub fn eigvalsh(a: &ArrayView2<C64>, herm_tol: f64) -> Result<Array1<f64>, LinalgError> {
    eigh(a, herm_tol).map(|(w, _)| w)
}

/// Matrix exponential by scaling and squaring with a Taylor kernel.
///
/// Accurate to near machine precision for the generator norms used here;
/// intended for small matrices (vectorized superoperators of compact
/// Fock spaces), cost is a handful of dense multiplies.
pub fn expm(a: &ArrayView2<C64>) -> Array2<C64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm: matrix must be square");
    let norm = inf_norm(a);
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let factor = C64::new(1.0 / f64::powi(2.0, squarings as i32), 0.0);
    let b = a.mapv(|z| z * factor);
    let mut term = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let mut sum = term.clone();
    for k in 1..60 {
        term = mat_mul(&term.view(), &b.view());
        term.mapv_inplace(|z| z / k as f64);
        sum = sum + &term;
        if frobenius_norm(&term.view()) < 1e-18 * frobenius_norm(&sum.view()).max(1.0) {
            break;
        }
    }
    let mut result = sum;
    for _ in 0..squarings {
        result = mat_mul(&result.view(), &result.view());
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_complex(n: usize, seed: u64) -> Array2<C64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, n), |_| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn random_hermitian(n: usize, seed: u64) -> Array2<C64> {
        let g = random_complex(n, seed);
        let gd = dagger(&g.view());
        (g + gd).mapv(|z| z * 0.5)
    }

    fn identity(n: usize) -> Array2<C64> {
        Array2::from_shape_fn((n, n), |(i, j)| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) })
    }

    #[test]
    fn test_kron_small_blocks() {
        let a = array![[c(1.0, 0.0), c(2.0, 0.0)], [c(0.0, 0.0), c(1.0, 1.0)]];
        let b = array![[c(0.0, 1.0), c(0.0, 0.0)], [c(3.0, 0.0), c(1.0, 0.0)]];
        let k = kron(&a.view(), &b.view());
        assert_eq!(k.dim(), (4, 4));
        assert_eq!(k[[0, 0]], c(0.0, 1.0));
        assert_eq!(k[[0, 2]], c(0.0, 2.0));
        assert_eq!(k[[3, 2]], c(3.0, 0.0) * c(1.0, 1.0));
        assert_eq!(k[[1, 3]], c(2.0, 0.0));
    }

    #[test]
    fn test_mat_mul_matches_manual() {
        let a = random_complex(17, 1);
        let b = random_complex(17, 2);
        let ab = mat_mul(&a.view(), &b.view());
        for i in [0usize, 5, 16] {
            for j in [0usize, 3, 16] {
                let mut s = c(0.0, 0.0);
                for k in 0..17 {
                    s += a[[i, k]] * b[[k, j]];
                }
                assert!((ab[[i, j]] - s).norm() < 1e-12, "mismatch at ({i},{j})");
            }
        }
    }

    #[test]
    fn test_lu_solves_random_system() {
        let n = 40;
        let a = random_complex(n, 7);
        let x_true = random_complex(n, 8);
        let b = mat_mul(&a.view(), &x_true.view());
        let lu = Lu::new(a.clone()).expect("factorization");
        let mut x = b.clone();
        lu.solve_in_place(&mut x);
        let diff = &x - &x_true;
        assert!(
            max_abs(&diff.view()) < 1e-10,
            "solve error {:.3e}",
            max_abs(&diff.view())
        );
    }

    #[test]
    fn test_lu_rejects_singular() {
        let mut a = random_complex(6, 3);
        let row0: Vec<C64> = a.row(0).iter().copied().collect();
        for j in 0..6 {
            a[[3, j]] = row0[j];
        }
        let lu = Lu::new(a);
        match lu {
            Ok(f) => assert!(f.min_pivot_ratio < 1e-12, "duplicate row should be flagged"),
            Err(LinalgError::Singular { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn test_eigh_two_by_two_exact() {
        // Pauli x has eigenvalues -1, +1.
        let a = array![[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]];
        let (w, v) = eigh(&a.view(), 1e-12).expect("eigh");
        assert!((w[0] + 1.0).abs() < 1e-14);
        assert!((w[1] - 1.0).abs() < 1e-14);
        let av = mat_mul(&a.view(), &v.view());
        for j in 0..2 {
            for i in 0..2 {
                assert!((av[[i, j]] - v[[i, j]] * w[j]).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn test_eigh_random_residuals() {
        let n = 30;
        let a = random_hermitian(n, 11);
        let (w, v) = eigh(&a.view(), 1e-12).expect("eigh");
        // Unitarity of V.
        let vtv = mat_mul(&dagger(&v.view()).view(), &v.view());
        let dev = max_abs(&(&vtv - &identity(n)).view());
        assert!(dev < 1e-12, "V not unitary, dev {dev:.3e}");
        // A V = V diag(w).
        let av = mat_mul(&a.view(), &v.view());
        let mut vw = v.clone();
        for j in 0..n {
            for i in 0..n {
                vw[[i, j]] *= w[j];
            }
        }
        let res = max_abs(&(&av - &vw).view());
        assert!(res < 1e-11, "eigen residual {res:.3e}");
        // Eigenvalues ascending.
        for j in 1..n {
            assert!(w[j] >= w[j - 1]);
        }
    }

    #[test]
    fn test_eigh_rejects_non_hermitian() {
        let a = random_complex(5, 21);
        assert!(matches!(
            eigh(&a.view(), 1e-12),
            Err(LinalgError::NotHermitian { .. })
        ));
    }

    #[test]
    fn test_expm_zero_and_diagonal() {
        let z: Array2<C64> = Array2::zeros((4, 4));
        let e = expm(&z.view());
        assert!(max_abs(&(&e - &identity(4)).view()) < 1e-15);
        let mut d: Array2<C64> = Array2::zeros((3, 3));
        d[[0, 0]] = c(1.0, 0.0);
        d[[1, 1]] = c(-2.0, 0.5);
        d[[2, 2]] = c(0.0, -3.0);
        let ed = expm(&d.view());
        for i in 0..3 {
            assert!((ed[[i, i]] - d[[i, i]].exp()).norm() < 1e-13);
        }
        assert!(ed[[0, 1]].norm() < 1e-15);
    }

    #[test]
    fn test_expm_matches_eigh_for_skew_hermitian_exponent() {
        // exp(-i H) computed two ways for Hermitian H.
        let h = random_hermitian(12, 33);
        let a = h.mapv(|z| z * c(0.0, -1.0));
        let direct = expm(&a.view());
        let (w, v) = eigh(&h.view(), 1e-12).expect("eigh");
        let mut phase = v.clone();
        for j in 0..12 {
            let f = (c(0.0, -1.0) * w[j]).exp();
            for i in 0..12 {
                phase[[i, j]] *= f;
            }
        }
        let via_eig = mat_mul(&phase.view(), &dagger(&v.view()).view());
        let dev = max_abs(&(&direct - &via_eig).view());
        assert!(dev < 1e-12, "expm vs eigh dev {dev:.3e}");
    }

    #[test]
    fn test_gemm_sub_into_accumulates() {
        let a = random_complex(9, 41);
        let b = random_complex(9, 42);
        let mut out = random_complex(9, 43);
        let expected = &out - &mat_mul(&a.view(), &b.view());
        gemm_sub_into(&mut out, &a.view(), &b.view());
        assert!(max_abs(&(&out - &expected).view()) < 1e-12);
    }
}
