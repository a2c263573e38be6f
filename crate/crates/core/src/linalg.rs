//! Small dense helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{PandaError, Result};

/// Solves `a x = b` for symmetric positive definite `a`.
///
/// Falls back to an SVD least-squares solve when the Cholesky factorization
/// fails; a numerically rank-deficient system is reported as an error.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    let cols = a.ncols();
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (cols as f64) * f64::EPSILON;
    let rank = svd.rank(tol);
    if rank < cols || !smax.is_finite() {
        return Err(PandaError::NumericalRank { rank, cols });
    }
    svd.solve(b, tol)
        .map_err(|_| PandaError::NumericalRank { rank, cols })
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn inv_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ch = a
        .clone()
        .cholesky()
        .ok_or_else(|| PandaError::NotPositiveDefinite("cholesky failed".into()))?;
    Ok(symmetrize(&ch.inverse()))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    symmetrize(a).symmetric_eigenvalues().min()
}

/// Column means of `x`.
pub fn col_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Copy of `x` with every column centered.
pub fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut c in out.column_iter_mut() {
        let mean = c.mean();
        c.add_scalar_mut(-mean);
    }
    out
}

/// Centers each column and scales it to unit sample variance (divisor n-1).
/// Constant columns are only centered.
pub fn standardize_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = center_columns(x);
    let n = x.nrows();
    if n < 2 {
        return out;
    }
    for mut c in out.column_iter_mut() {
        let sd = (c.norm_squared() / (n - 1) as f64).sqrt();
        if sd > 0.0 {
            c /= sd;
        }
    }
    out
}

/// Copy of `x` without column `j`.
pub fn drop_column(x: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    x.clone().remove_column(j)
}

/// Dot product with four partial sums so the loop vectorizes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// x'x, filled from the upper triangle.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, q) = x.shape();
    let data = x.as_slice();
    let mut g = DMatrix::zeros(q, q);
    for j in 0..q {
        let cj = &data[j * n..(j + 1) * n];
        for k in j..q {
            let v = dot(cj, &data[k * n..(k + 1) * n]);
            g[(j, k)] = v;
            g[(k, j)] = v;
        }
    }
    g
}
