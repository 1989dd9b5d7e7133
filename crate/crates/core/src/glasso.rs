//! Sparse inverse-covariance estimation (graphical lasso) via ADMM, and the
//! Gaussian log-likelihood used by the regime costs.
//!
//! The solver minimizes
//!
//! ```text
//! tr(S X) - log det X + lambda * sum_{i != j} |X_ij|
//! ```
//!
//! by splitting `X = Z`: the `X` update is a closed form through the
//! eigendecomposition of `rho (Z - U) - S`, the `Z` update soft-thresholds
//! off-diagonal entries only. `rho` starts at the configured value and is
//! doubled or halved every few iterations to keep the primal and dual
//! residuals within a factor of ten of each other.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, log_det, quad_form, symmetrize, symmetrized};
use crate::scalar::{ln_2pi, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlassoConfig {
    /// Initial ADMM penalty.
    pub rho: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_admm_iter: usize,
}

impl Default for GlassoConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            abs_tol: 1e-5,
            rel_tol: 1e-4,
            max_admm_iter: 500,
        }
    }
}

impl GlassoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.abs_tol > 0.0 && self.rel_tol > 0.0) || self.max_admm_iter == 0 {
            return Err(Error::InvalidHyperparameter(
                "glasso rho, tolerances and iteration cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlassoResult<T: Real> {
    pub precision: DMatrix<T>,
    pub iterations: usize,
    /// False when `max_admm_iter` was reached before the residual tests passed.
    pub converged: bool,
    /// Penalty parameter at exit; pass it back through [`WarmStart`].
    pub rho: f64,
}

/// A previous solution to resume from.
#[derive(Debug, Clone, Copy)]
pub struct WarmStart<'a, T: Real> {
    pub precision: &'a DMatrix<T>,
    /// ADMM penalty to resume with; non-positive values fall back to the
    /// configured one.
    pub rho: f64,
}

/// Mean and biased (`1/M`) covariance of the columns of `samples` (`N x M`).
pub fn empirical_moments<T: Real>(samples: &DMatrix<T>) -> Result<(DVector<T>, DMatrix<T>)> {
    let m = samples.ncols();
    if m == 0 {
        return Err(Error::EmptyRegime);
    }
    let inv_m = T::one() / T::from_usize_lossy(m);
    let mean = samples.column_sum() * inv_m;
    let mut centered = samples.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let cov = symmetrized(&centered * centered.transpose() * inv_m);
    Ok((mean, cov))
}

/// Iterations between penalty-parameter adjustments.
const ADAPT_RHO_EVERY: usize = 5;

/// Ridge added to the diagonal before estimation: `1e-6 * trace / N`.
fn diagonal_ridge<T: Real>(cov: &DMatrix<T>) -> T {
    let n = T::from_usize_lossy(cov.nrows());
    let avg = cov.trace() / n;
    let eps = T::lit(1e-6) * avg;
    if eps > T::lit(1e-300) && eps.finite() {
        eps
    } else {
        T::lit(1e-6)
    }
}

/// Sparse precision estimate for covariance `cov` with off-diagonal penalty
/// `lambda`. `warm` seeds ADMM with a previous precision estimate.
pub fn graphical_lasso<T: Real>(
    cov: &DMatrix<T>,
    lambda: T,
    cfg: &GlassoConfig,
    warm: Option<WarmStart<'_, T>>,
) -> Result<GlassoResult<T>> {
    let n = cov.nrows();
    if n == 0 {
        return Err(Error::Dimension("empty covariance".into()));
    }
    if cov.ncols() != n {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    if cov.iter().any(|v| !v.finite()) {
        return Err(Error::NonFinite("covariance entry".into()));
    }
    if lambda < T::zero() || !lambda.finite() {
        return Err(Error::InvalidHyperparameter("lambda must be >= 0".into()));
    }
    cfg.validate()?;

    let mut s = symmetrized(cov.clone());
    let ridge = diagonal_ridge(&s);
    for i in 0..n {
        s[(i, i)] += ridge;
    }

    if lambda == T::zero() {
        let chol = cholesky_jittered(&s)?;
        return Ok(GlassoResult {
            precision: symmetrized(chol.inverse()),
            iterations: 0,
            converged: true,
            rho: cfg.rho,
        });
    }

    let warm = warm.filter(|w| w.precision.shape() == (n, n));
    let start_rho = match warm {
        Some(w) if w.rho > 0.0 && w.rho.is_finite() => w.rho,
        _ => cfg.rho,
    };
    let mut rho = T::lit(start_rho);
    let abs_tol = T::lit(cfg.abs_tol);
    let rel_tol = T::lit(cfg.rel_tol);
    let scale = T::from_usize_lossy(n);

    // Starting from a previous solution W, the scaled dual (W^-1 - S) / rho
    // makes W an exact fixed point when S has not moved.
    let (mut z, mut u) = match warm {
        Some(w) => match cholesky_jittered(w.precision) {
            Ok(chol) => {
                let w_inv = symmetrized(chol.inverse());
                (w.precision.clone(), (w_inv - &s) / rho)
            }
            Err(_) => (DMatrix::identity(n, n), DMatrix::zeros(n, n)),
        },
        None => (DMatrix::identity(n, n), DMatrix::zeros(n, n)),
    };
    let mut x = z.clone();

    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.max_admm_iter {
        iterations = it + 1;

        let mut target = (&z - &u) * rho - &s;
        symmetrize(&mut target);
        let eig = target.symmetric_eigen();
        let four_rho = T::lit(4.0) * rho;
        let two_rho = T::lit(2.0) * rho;
        let d = eig
            .eigenvalues
            .map(|e| (e + (e * e + four_rho).sqrt()) / two_rho);
        let q = &eig.eigenvectors;
        x = symmetrized(q * DMatrix::from_diagonal(&d) * q.transpose());

        let kappa = lambda / rho;
        let z_old = z.clone();
        let xu = &x + &u;
        z = DMatrix::from_fn(n, n, |i, j| {
            let v = xu[(i, j)];
            if i == j {
                v
            } else {
                soft_threshold(v, kappa)
            }
        });
        symmetrize(&mut z);
        u += &x - &z;

        let primal = (&x - &z).norm();
        let dual = (&z - &z_old).norm() * rho;
        let eps_primal = scale * abs_tol + rel_tol * x.norm().max(z.norm());
        let eps_dual = scale * abs_tol + rel_tol * (u.norm() * rho);
        if primal <= eps_primal && dual <= eps_dual {
            converged = true;
            break;
        }
        // Residual balancing on tolerance-normalized residuals; the scaled
        // dual moves inversely to rho.
        if it % ADAPT_RHO_EVERY == ADAPT_RHO_EVERY - 1 {
            let p = primal / eps_primal;
            let q = dual / eps_dual;
            let ten = T::lit(10.0);
            if p > ten * q {
                rho *= T::lit(2.0);
                u *= T::lit(0.5);
            } else if q > ten * p {
                rho *= T::lit(0.5);
                u *= T::lit(2.0);
            }
        }
    }

    // Z carries the exact zeros; fall back to X if thresholding broke definiteness.
    let precision = if nalgebra::Cholesky::new(z.clone()).is_some() {
        z
    } else {
        x
    };
    Ok(GlassoResult {
        precision,
        iterations,
        converged,
        rho: rho.as_f64(),
    })
}

/// `tr(S X) - log det X + lambda * sum_{i != j} |X_ij|` without the ridge,
/// or `None` when `precision` is not positive definite.
pub fn penalized_objective<T: Real>(cov: &DMatrix<T>, precision: &DMatrix<T>, lambda: T) -> Option<T> {
    let chol = nalgebra::Cholesky::new(precision.clone())?;
    let fit = cov.component_mul(precision).sum();
    Some(fit - log_det(&chol) + lambda * off_diagonal_l1(precision))
}

#[inline]
pub fn soft_threshold<T: Real>(v: T, kappa: T) -> T {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        T::zero()
    }
}

/// Off-diagonal l1 norm.
pub fn off_diagonal_l1<T: Real>(m: &DMatrix<T>) -> T {
    let mut acc = T::zero();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j {
                acc += m[(i, j)].abs();
            }
        }
    }
    acc
}

/// Gaussian log-density of `x` under `N(mean, precision^-1)`.
pub fn gaussian_ll<T: Real>(x: &DVector<T>, mean: &DVector<T>, precision: &DMatrix<T>) -> Result<T> {
    let n = x.len();
    if mean.len() != n || precision.shape() != (n, n) {
        return Err(Error::Dimension("gaussian_ll operands disagree".into()));
    }
    let chol = nalgebra::Cholesky::new(precision.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("precision in gaussian_ll".into()))?;
    let d = x - mean;
    let half = T::lit(0.5);
    Ok(-half * quad_form(precision, &d) + half * log_det(&chol)
        - half * T::from_usize_lossy(n) * ln_2pi::<T>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GlassoConfig {
        GlassoConfig {
            abs_tol: 1e-9,
            rel_tol: 1e-8,
            max_admm_iter: 20_000,
            ..GlassoConfig::default()
        }
    }

    #[test]
    fn moments_of_two_points() {
        let x = DMatrix::from_column_slice(2, 2, &[0.0, 0.0, 2.0, 2.0]);
        let (mean, cov) = empirical_moments(&x).unwrap();
        assert_eq!(mean.as_slice(), &[1.0, 1.0]);
        assert_eq!(cov, DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn moments_single_sample_has_zero_cov() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 4.0]);
        let (mean, cov) = empirical_moments(&x).unwrap();
        assert_eq!(mean.as_slice(), &[1.0, -2.0, 4.0]);
        assert!(cov.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn moments_empty_errors() {
        let x = DMatrix::<f64>::zeros(3, 0);
        assert_eq!(empirical_moments(&x), Err(Error::EmptyRegime));
    }

    #[test]
    fn moments_ignore_sample_order() {
        let a = DMatrix::from_column_slice(2, 3, &[1.0, 2.0, -1.0, 0.5, 3.0, -2.0]);
        let b = DMatrix::from_column_slice(2, 3, &[3.0, -2.0, 1.0, 2.0, -1.0, 0.5]);
        let (ma, ca) = empirical_moments(&a).unwrap();
        let (mb, cb) = empirical_moments(&b).unwrap();
        assert!((ma - mb).norm() < 1e-15);
        assert!((ca - cb).norm() < 1e-15);
    }

    #[test]
    fn identity_is_its_own_inverse() {
        for n in 1..5 {
            let p = graphical_lasso(&DMatrix::<f64>::identity(n, n), 0.0, &cfg(), None).unwrap();
            assert!((p.precision - DMatrix::identity(n, n)).amax() < 1e-5);
        }
    }

    #[test]
    fn unpenalized_two_by_two_is_direct_inverse() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.8, 0.8, 1.0]);
        // det = 1.36
        let expected = DMatrix::from_row_slice(2, 2, &[1.0 / 1.36, -0.8 / 1.36, -0.8 / 1.36, 2.0 / 1.36]);
        let p = graphical_lasso(&cov, 0.0, &cfg(), None).unwrap();
        assert!((p.precision - expected).amax() < 1e-4);
    }

    #[test]
    fn large_penalty_decouples() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0f64, 0.8, 0.8, 1.0]);
        let p = graphical_lasso(&cov, 10.0, &cfg(), None).unwrap().precision;
        assert_eq!(p[(0, 1)], 0.0);
        assert_eq!(p[(1, 0)], 0.0);
        assert!((p[(0, 0)] - 0.5).abs() < 1e-3);
        assert!((p[(1, 1)] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn warm_start_at_solution_stops_immediately() {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, 0.3, 0.2, 0.3, 1.0]);
        let first = graphical_lasso(&cov, 0.1, &cfg(), None).unwrap();
        let warm = WarmStart {
            precision: &first.precision,
            rho: first.rho,
        };
        let again = graphical_lasso(&cov, 0.1, &GlassoConfig::default(), Some(warm)).unwrap();
        assert!(again.iterations <= 3, "took {}", again.iterations);
        assert!((again.precision - first.precision).amax() < 1e-4);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cov = DMatrix::from_row_slice(1, 1, &[f64::INFINITY]);
        assert!(graphical_lasso(&cov, 0.1, &cfg(), None).is_err());
        let empty = DMatrix::<f64>::zeros(0, 0);
        assert!(graphical_lasso(&empty, 0.1, &cfg(), None).is_err());
    }

    #[test]
    fn ll_standard_normal_at_mean() {
        let x = DVector::from_element(1, 3.0f64);
        let v = gaussian_ll(&x, &x, &DMatrix::identity(1, 1)).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn ll_at_mean_is_log_det_term() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let x = DVector::from_vec(vec![0.2, -0.1]);
        let v = gaussian_ll(&x, &x, &p).unwrap();
        let expected = 0.5 * (2.0f64 - 0.09).ln() - std::f64::consts::TAU.ln();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn ll_scaling_identity() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let mean = DVector::from_vec(vec![0.5, 1.0]);
        let x = DVector::from_vec(vec![1.5, -0.5]);
        let c = 3.0f64;
        let d = &x - &mean;
        let q = d.dot(&(&p * &d));
        let base = gaussian_ll(&x, &mean, &p).unwrap();
        let scaled = gaussian_ll(&x, &mean, &(&p * c)).unwrap();
        let expected = 0.5 * 2.0 * c.ln() - (c - 1.0) / 2.0 * q;
        assert!((scaled - base - expected).abs() < 1e-12);
    }

    #[test]
    fn ll_rejects_indefinite() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let x = DVector::zeros(2);
        assert!(matches!(gaussian_ll(&x, &x, &p), Err(Error::NotPositiveDefinite(_))));
    }
}
