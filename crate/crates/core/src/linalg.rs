//! Thin wrappers around the LAPACK-backed dense solvers.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::{Eig, Eigh, Solve, UPLO};
use num_complex::Complex64;

/// Eigenvalues and eigenvectors of a real symmetric matrix, ascending.
pub fn sym_eig(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    a.eigh(UPLO::Lower)
        .map_err(|e| Error::Eigen(format!("symmetric eigensolve: {e}")))
}

/// Eigenvalues of a real symmetric matrix, ascending.
pub fn sym_eigvals(a: &Array2<f64>) -> Result<Array1<f64>> {
    use ndarray_linalg::EigValsh;
    a.eigvalsh(UPLO::Lower)
        .map_err(|e| Error::Eigen(format!("symmetric eigenvalues: {e}")))
}

/// Full eigendecomposition of a general complex matrix.
pub fn complex_eig(a: &Array2<Complex64>) -> Result<(Array1<Complex64>, Array2<Complex64>)> {
    a.eig()
        .map_err(|e| Error::Eigen(format!("complex eigensolve: {e}")))
}

/// Solve a dense complex linear system.
pub fn complex_solve(a: &Array2<Complex64>, b: &Array1<Complex64>) -> Result<Array1<Complex64>> {
    a.solve(b)
        .map_err(|e| Error::SingularSolve(format!("complex solve: {e}")))
}

/// Solve a dense real linear system.
pub fn real_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    a.solve(b)
        .map_err(|e| Error::SingularSolve(format!("real solve: {e}")))
}

/// Smallest generalized eigenvalue of `A x = mu B x` with `A` symmetric and
/// `B` symmetric positive definite, by Cholesky reduction.
pub fn gen_sym_eig_min(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    let vals = gen_sym_eigvals(a, b)?;
    Ok(vals[0])
}

/// All generalized eigenvalues of `(A, B)`, ascending.
pub fn gen_sym_eigvals(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array1<f64>> {
    use ndarray_linalg::Cholesky;
    let l = b
        .cholesky(UPLO::Lower)
        .map_err(|e| Error::Eigen(format!("cholesky of sigma gram: {e}")))?;
    // C = L^-1 A L^-T via two triangular solves
    let li = invert_lower_triangular(&l)?;
    let c = li.dot(a).dot(&li.t());
    let c = 0.5 * (&c + &c.t());
    sym_eigvals(&c)
}

fn invert_lower_triangular(l: &Array2<f64>) -> Result<Array2<f64>> {
    let n = l.nrows();
    let mut inv = Array2::zeros((n, n));
    for j in 0..n {
        inv[[j, j]] = 1.0 / l[[j, j]];
        for i in j + 1..n {
            let mut s = 0.0;
            for k in j..i {
                s += l[[i, k]] * inv[[k, j]];
            }
            inv[[i, j]] = -s / l[[i, i]];
        }
    }
    Ok(inv)
}

/// Orthonormal basis (columns) of the orthogonal complement of `u`,
/// via the Householder reflector that maps `u` onto the first coordinate
/// axis. `u` need not be normalized. Returns an n x (n-1) matrix.
pub fn complement_basis(u: &Array1<f64>) -> Array2<f64> {
    let n = u.len();
    let norm = u.dot(u).sqrt();
    let sign = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut w = u.to_owned();
    w[0] += sign * norm;
    let wn2 = w.dot(&w);
    // H = I - 2 w w^T / |w|^2; columns 1..n are orthonormal and orthogonal to u
    let mut basis = Array2::zeros((n, n - 1));
    for c in 1..n {
        let factor = -2.0 * w[c] / wn2;
        for r in 0..n {
            basis[[r, c - 1]] = factor * w[r] + if r == c { 1.0 } else { 0.0 };
        }
    }
    basis
}

/// Project a full-space symmetric form onto the complement basis: V^T A V.
pub fn project_form(a: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
    let av = a.dot(v);
    let m = v.t().dot(&av);
    0.5 * (&m + &m.t())
}

/// Maximum absolute entry.
pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Weighted bilinear pairing sum_i w_i f_i g_i (no conjugation).
pub fn bilinear(w: &Array1<f64>, f: &Array1<Complex64>, g: &Array1<Complex64>) -> Complex64 {
    f.iter()
        .zip(g.iter())
        .zip(w.iter())
        .map(|((a, b), wi)| a * b * wi)
        .sum()
}

/// Weighted sesquilinear inner product sum_i w_i conj(f_i) g_i.
pub fn hermitian(w: &Array1<f64>, f: &Array1<Complex64>, g: &Array1<Complex64>) -> Complex64 {
    f.iter()
        .zip(g.iter())
        .zip(w.iter())
        .map(|((a, b), wi)| a.conj() * b * wi)
        .sum()
}

/// Weighted L2 norm of a complex vector.
pub fn wnorm(w: &Array1<f64>, f: &Array1<Complex64>) -> f64 {
    f.iter()
        .zip(w.iter())
        .map(|(a, wi)| a.norm_sqr() * wi)
        .sum::<f64>()
        .sqrt()
}

/// Weighted L2 norm of a real vector.
pub fn wnorm_r(w: &Array1<f64>, f: &Array1<f64>) -> f64 {
    f.iter()
        .zip(w.iter())
        .map(|(a, wi)| a * a * wi)
        .sum::<f64>()
        .sqrt()
}

/// Residual check |A x - lambda x| for eigenpair verification.
pub fn eig_residual(
    a: &Array2<Complex64>,
    lambda: Complex64,
    x: &Array1<Complex64>,
) -> f64 {
    let ax = a.dot(x);
    let mut r = 0.0f64;
    for i in 0..x.len() {
        r += (ax[i] - lambda * x[i]).norm_sqr();
    }
    r.sqrt() / x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Sum of rows scaled: y = A f for dense complex A (helper kept close to the
/// eig wrappers so callers avoid pulling ndarray ops everywhere).
pub fn matvec_c(a: &Array2<Complex64>, f: &Array1<Complex64>) -> Array1<Complex64> {
    a.dot(f)
}

/// Columns of `m` reordered by `perm`.
pub fn select_columns(m: &Array2<Complex64>, perm: &[usize]) -> Array2<Complex64> {
    let mut out = Array2::zeros((m.nrows(), perm.len()));
    for (j, &p) in perm.iter().enumerate() {
        out.index_axis_mut(Axis(1), j).assign(&m.column(p));
    }
    out
}
