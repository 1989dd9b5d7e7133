//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::scalar::Real;

const MAX_JITTER_ROUNDS: usize = 8;

/// Replaces `m` with `(m + m') / 2`.
pub fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized<T: Real>(mut m: DMatrix<T>) -> DMatrix<T> {
    symmetrize(&mut m);
    m
}

/// Cholesky factorization that retries with a growing diagonal jitter.
///
/// The first jitter is `1e-9 * trace / n`; each retry multiplies it by ten.
pub fn cholesky_jittered<T: Real>(m: &DMatrix<T>) -> Result<Cholesky<T, Dyn>> {
    if m.iter().any(|v| !v.finite()) {
        return Err(Error::NonFinite("matrix passed to Cholesky".into()));
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows().max(1);
    let mean_diag = m.trace() / T::from_usize_lossy(n);
    let scale = if mean_diag > T::zero() {
        mean_diag
    } else {
        T::one()
    };
    let mut eps = T::lit(1e-9) * scale;
    for _ in 0..MAX_JITTER_ROUNDS {
        let mut jittered = m.clone();
        for i in 0..m.nrows() {
            jittered[(i, i)] += eps;
        }
        if let Some(c) = Cholesky::new(jittered) {
            return Ok(c);
        }
        eps *= T::lit(10.0);
    }
    Err(Error::NotPositiveDefinite(format!(
        "{}x{} matrix after jitter",
        m.nrows(),
        m.ncols()
    )))
}

/// log det of the factored matrix.
pub fn log_det<T: Real>(chol: &Cholesky<T, Dyn>) -> T {
    let l = chol.l_dirty();
    let mut acc = T::zero();
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    acc * T::lit(2.0)
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn spd_inverse<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let chol = cholesky_jittered(m)?;
    Ok(symmetrized(chol.inverse()))
}

/// `x' A x`
pub fn quad_form<T: Real>(a: &DMatrix<T>, x: &DVector<T>) -> T {
    x.dot(&(a * x))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues
        .iter()
        .copied()
        .fold(T::max_value().unwrap_or_else(T::one), |a, b| a.min(b))
}

/// Rows of `m` picked by `idx`.
pub fn select_rows<T: Real>(m: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

pub fn max_abs_asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for j in 0..m.ncols() {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}
