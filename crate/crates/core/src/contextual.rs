//! Network coupling of the observation matrices.
//!
//! Each column `s_j` of a regime's contextual matrix is modelled as
//! `s_j ~ N(U v_j, var_s I)` with `v_j ~ N(0, var_v I)`. This module holds the
//! posterior over the `v_j`, the blended row update of `U`, and the map from
//! a precision matrix to partial correlations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, symmetrized};
use crate::scalar::Real;
use crate::types::{PartialSeries, RegimePath, SmoothedPosterior};

/// Gaussian posterior of the contextual latent factors of one regime.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualPosterior<T: Real> {
    /// `L x N`, column `j` is `E[v_j]`.
    pub mean: DMatrix<T>,
    /// Posterior covariance, identical for every column.
    pub cov: DMatrix<T>,
    /// `E[v_j v_j']` per column.
    pub second: Vec<DMatrix<T>>,
}

impl<T: Real> ContextualPosterior<T> {
    /// `sum_j E[v_j v_j']`
    pub fn second_sum(&self) -> DMatrix<T> {
        let l = self.cov.nrows();
        self.second.iter().fold(DMatrix::zeros(l, l), |acc, m| acc + m)
    }
}

pub fn infer_contextual_factors<T: Real>(
    s: &DMatrix<T>,
    u: &DMatrix<T>,
    var_s: T,
    var_v: T,
) -> Result<ContextualPosterior<T>> {
    let (n, l) = u.shape();
    if s.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "contextual matrix {:?} does not match U {:?}",
            s.shape(),
            u.shape()
        )));
    }
    if !(var_s > T::zero() && var_v > T::zero()) {
        return Err(Error::InvalidInput("contextual variances must be positive".into()));
    }
    let mut m = u.transpose() * u;
    let ridge = var_s / var_v;
    for i in 0..l {
        m[(i, i)] += ridge;
    }
    let chol = cholesky_jittered(&symmetrized(m))?;
    let cov = symmetrized(chol.inverse() * var_s);
    let mean = chol.solve(&(u.transpose() * s));
    let second = (0..n)
        .map(|j| {
            let nu = mean.column(j);
            symmetrized(&cov + nu * nu.transpose())
        })
        .collect();
    Ok(ContextualPosterior { mean, cov, second })
}

/// Inputs of [`update_observation_matrix`] that stay fixed across rows.
#[derive(Debug, Clone, Copy)]
pub struct RowUpdate<'a, T: Real> {
    pub regime: usize,
    pub alpha: T,
    pub series: &'a PartialSeries<T>,
    pub smoothed: &'a SmoothedPosterior<T>,
    pub path: &'a RegimePath,
    pub ctx: &'a ContextualPosterior<T>,
    pub s: &'a DMatrix<T>,
    pub var_x: T,
    pub var_s: T,
}

/// Result of the row-wise update of a regime's observation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationUpdate<T: Real> {
    pub u: DMatrix<T>,
    /// Rows whose normal equations were singular; they keep their old values.
    pub frozen_rows: Vec<usize>,
}

/// Blended update of every row of `U`:
///
/// ```text
/// U_i = A1 A2^-1
/// A1 = alpha/var_s sum_j S_ij E[v_j]' + (1-alpha)/var_x sum_{t in k} W_it x_it E[z_t]'
/// A2 = alpha/var_s sum_j E[v_j v_j'] + (1-alpha)/var_x sum_{t in k} W_it E[z_t z_t']
/// ```
pub fn update_observation_matrix<T: Real>(
    inp: &RowUpdate<'_, T>,
    previous: &DMatrix<T>,
) -> Result<ObservationUpdate<T>> {
    let (n, l) = previous.shape();
    if inp.series.num_features() != n || inp.ctx.mean.shape() != (l, n) || inp.s.shape() != (n, n) {
        return Err(Error::Dimension("observation update operands disagree".into()));
    }
    if !(inp.alpha >= T::zero() && inp.alpha <= T::one()) {
        return Err(Error::InvalidHyperparameter("alpha must lie in [0, 1]".into()));
    }
    let ctx_w = inp.alpha / inp.var_s;
    let data_w = (T::one() - inp.alpha) / inp.var_x;

    let ctx_a2 = inp.ctx.second_sum() * ctx_w;
    // Row-specific data moments accumulated over the regime's timesteps.
    let mut a1 = DMatrix::<T>::zeros(n, l);
    let mut a2: Vec<DMatrix<T>> = vec![DMatrix::zeros(l, l); n];
    if data_w > T::zero() {
        for t in 0..inp.series.len() {
            if inp.path.get(t) != inp.regime {
                continue;
            }
            let mu = inp.smoothed.mean.column(t);
            let second = &inp.smoothed.second[t];
            for &i in inp.series.observed_indices(t) {
                let x = inp.series.values()[(i, t)];
                for c in 0..l {
                    a1[(i, c)] += x * mu[c];
                }
                a2[i] += second;
            }
        }
    }
    // alpha part of A1: S_i: * V'
    let ctx_a1 = inp.s * inp.ctx.mean.transpose() * ctx_w;

    let mut u = previous.clone();
    let mut frozen_rows = Vec::new();
    for i in 0..n {
        let lhs = &ctx_a2 + &a2[i] * data_w;
        let rhs: DVector<T> = (ctx_a1.row(i) + a1.row(i) * data_w).transpose();
        if lhs.iter().all(|&v| v == T::zero()) {
            frozen_rows.push(i);
            continue;
        }
        match cholesky_jittered(&symmetrized(lhs)) {
            Ok(chol) => {
                let row = chol.solve(&rhs);
                if row.iter().all(|v| v.finite()) {
                    u.set_row(i, &row.transpose());
                } else {
                    frozen_rows.push(i);
                }
            }
            Err(_) => frozen_rows.push(i),
        }
    }
    Ok(ObservationUpdate { u, frozen_rows })
}

/// Partial correlations of a precision matrix, with an exact unit diagonal.
pub fn partial_correlation_matrix<T: Real>(precision: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = precision.nrows();
    if precision.ncols() != n {
        return Err(Error::Dimension("precision must be square".into()));
    }
    let diag: Vec<T> = (0..n).map(|i| precision[(i, i)]).collect();
    if let Some(i) = diag.iter().position(|&d| !(d > T::zero())) {
        return Err(Error::NotPositiveDefinite(format!(
            "diagonal entry {i} of the precision is not positive"
        )));
    }
    let root: Vec<T> = diag.iter().map(|d| d.sqrt()).collect();
    let one = T::one();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            one
        } else {
            // Average the two triangles so the result is exactly symmetric.
            let p = (precision[(i, j)] + precision[(j, i)]) * T::lit(0.5);
            (-(p / (root[i] * root[j]))).max(-one).min(one)
        }
    }))
}
