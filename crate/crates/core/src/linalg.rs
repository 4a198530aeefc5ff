//! Small dense linear-algebra helpers over `nalgebra`.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

const JITTER_BASE: f64 = 1e-10;
const JITTER_ESCALATIONS: usize = 3;

/// Cholesky factorization with bounded diagonal jitter.
///
/// Tries the matrix as given, then adds `1e-10 * trace / n` to the diagonal
/// and escalates by a factor of ten up to three times.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let base = if n == 0 { 0.0 } else { m.trace() / n as f64 };
    if base > 0.0 && base.is_finite() {
        let mut jitter = JITTER_BASE * base;
        for _ in 0..=JITTER_ESCALATIONS {
            let mut shifted = m.clone();
            for i in 0..n {
                shifted[(i, i)] += jitter;
            }
            if let Some(c) = Cholesky::new(shifted) {
                return Ok(c);
            }
            jitter *= 10.0;
        }
    }
    Err(Error::SingularSubmatrix { dim: n })
}

/// Square-root factor `L` with `L Lᵀ = m` for a symmetric PSD matrix.
///
/// Falls back to an eigen-decomposition with negative eigenvalues clamped to
/// zero, so rank-deficient and all-zero matrices are accepted.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return DMatrix::zeros(0, 0);
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return c.l();
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut factor = eig.eigenvectors;
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = libm::sqrt(lambda.max(0.0));
        factor.column_mut(k).scale_mut(s);
    }
    factor
}

/// Nearest-in-spectrum PSD matrix: eigenvalues below `floor` are raised to `floor`.
pub fn project_psd(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Rows `rows` and columns `cols` of `m`.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}
