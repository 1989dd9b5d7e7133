//! Regime-switching state-space inference: Kalman filtering on the
//! observed-only rows, the per-transition partial costs, Viterbi decoding
//! of the regime path, and RTS smoothing along the decoded path.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::glasso::gaussian_ll;
use crate::linalg::{cholesky_jittered, log_det, select_rows, symmetrize, symmetrized};
use crate::scalar::{ln_2pi, Real};
use crate::types::{ModelParams, PartialSeries, RegimePath, SmoothedPosterior};

/// One filtered state for a given (current, previous) regime pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCell<T: Real> {
    pub mean_pred: DVector<T>,
    pub mean_filt: DVector<T>,
    pub cov_pred: DMatrix<T>,
    pub cov_filt: DMatrix<T>,
    /// `L x |observed|` Kalman gain; zero columns when nothing is observed.
    pub gain: DMatrix<T>,
}

/// Innovation statistics of a measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Innovation<T> {
    /// `nu' Sigma^-1 nu`
    mahalanobis: T,
    /// `log det Sigma`
    log_det: T,
}

/// Dynamic-programming table filled by [`viterbi_decode`].
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiTable<T: Real> {
    /// `T x K` best accumulated cost ending in each regime.
    pub cost: DMatrix<T>,
    /// `T x K` predecessor of the best path into each regime (row 0 unused).
    pub backptr: DMatrix<usize>,
    /// Partial costs; `partial[t][(k, l)]` is the cost of entering `k` at `t`
    /// from `l` at `t - 1`. At `t = 0` every column holds the initial cost.
    pub partial: Vec<DMatrix<T>>,
    /// Best filtered cell ending in each regime, indexed `[t][k]`.
    pub filtered: Vec<Vec<FilterCell<T>>>,
}

/// Filtered moments along a single regime path: what the smoother consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredPath<T: Real> {
    pub means: Vec<DVector<T>>,
    pub covs: Vec<DMatrix<T>>,
    /// `psi_{t|t-1}`; entry 0 is the prior covariance.
    pub pred_covs: Vec<DMatrix<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiOutput<T: Real> {
    pub path: RegimePath,
    pub filtered: FilteredPath<T>,
    /// Total cost of the returned path (negative log joint, up to constants).
    pub total_cost: T,
    pub table: ViterbiTable<T>,
}

/// Measurement update shared by the initial and recursive steps.
fn measurement_update<T: Real>(
    mean_pred: DVector<T>,
    cov_pred: DMatrix<T>,
    obs: &DMatrix<T>,
    var_x: T,
    series: &PartialSeries<T>,
    t: usize,
) -> Result<(FilterCell<T>, Option<Innovation<T>>)> {
    let l = mean_pred.len();
    let (idx, x_obs) = series.observed_slice(t);
    if idx.is_empty() {
        let cell = FilterCell {
            mean_filt: mean_pred.clone(),
            cov_filt: cov_pred.clone(),
            mean_pred,
            cov_pred,
            gain: DMatrix::zeros(l, 0),
        };
        return Ok((cell, None));
    }
    let u_obs = select_rows(obs, idx);
    // Low-rank form of Sigma = U P U' + var_x I with P = C C' and G = U C:
    //   H = var_x I + G'G,  K = C H^-1 G',  P_filt = var_x C H^-1 C',
    //   nu' Sigma^-1 nu = |nu - G w|^2 / var_x + |w|^2,  w = H^-1 G' nu,
    //   log det Sigma = (m - L) log var_x + log det H.
    let c = psd_factor(&cov_pred)?;
    let g = &u_obs * &c;
    let mut h = g.transpose() * &g;
    for i in 0..l {
        h[(i, i)] += var_x;
    }
    symmetrize(&mut h);
    let h_chol = cholesky_jittered(&h)?;
    let nu = x_obs - &u_obs * &mean_pred;
    let w = h_chol.solve(&(g.transpose() * &nu));
    let resid = &nu - &g * &w;
    let mahalanobis = resid.norm_squared() / var_x + w.norm_squared();
    let m = T::from_usize_lossy(idx.len());
    let log_det_sigma = (m - T::from_usize_lossy(l)) * var_x.ln() + log_det(&h_chol);

    let gain = &c * h_chol.solve(&g.transpose());
    let mean_filt = &mean_pred + &c * &w;
    let cov_filt = symmetrized(&c * h_chol.solve(&c.transpose()) * var_x);
    let innovation = Innovation {
        mahalanobis,
        log_det: log_det_sigma,
    };
    Ok((
        FilterCell {
            mean_pred,
            mean_filt,
            cov_pred,
            cov_filt,
            gain,
        },
        Some(innovation),
    ))
}

/// `C` with `C C' = P` for a positive semidefinite `P`; falls back to the
/// eigendecomposition when Cholesky fails so that singular priors stay exact.
fn psd_factor<T: Real>(p: &DMatrix<T>) -> Result<DMatrix<T>> {
    if let Some(chol) = nalgebra::Cholesky::new(p.clone()) {
        return Ok(chol.l());
    }
    if p.iter().any(|v| !v.finite()) {
        return Err(Error::NonFinite("state covariance".into()));
    }
    let eig = symmetrized(p.clone()).symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(T::zero()).sqrt());
    Ok(eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

fn predict<T: Real>(prev: &FilterCell<T>, params: &ModelParams<T>) -> (DVector<T>, DMatrix<T>) {
    let b = &params.transition;
    let mean = b * &prev.mean_filt;
    let mut cov = b * &prev.cov_filt * b.transpose();
    for i in 0..cov.nrows() {
        cov[(i, i)] += params.var_z;
    }
    symmetrize(&mut cov);
    (mean, cov)
}

/// Filter step into regime `regime` at timestep `t >= 1` (0-indexed) from the
/// cell `prev` at `t - 1`.
pub fn filter_step<T: Real>(
    prev: &FilterCell<T>,
    regime: usize,
    series: &PartialSeries<T>,
    params: &ModelParams<T>,
    obs: &DMatrix<T>,
    t: usize,
) -> Result<FilterCell<T>> {
    if t == 0 {
        return Err(Error::InvalidInput("filter_step needs t >= 1".into()));
    }
    let (mean_pred, cov_pred) = predict(prev, params);
    measurement_update(mean_pred, cov_pred, obs, params.var_x[regime], series, t).map(|(c, _)| c)
}

/// First-timestep update from the prior `N(z0, psi0)` into regime `regime`.
pub fn initial_step<T: Real>(
    regime: usize,
    series: &PartialSeries<T>,
    params: &ModelParams<T>,
    obs: &DMatrix<T>,
) -> Result<FilterCell<T>> {
    measurement_update(
        params.z0.clone(),
        params.psi0.clone(),
        obs,
        params.var_x[regime],
        series,
        0,
    )
    .map(|(c, _)| c)
}

/// Precomputed per-regime network terms: `-ll` needs `log det Lambda`.
struct NetworkCost<T: Real> {
    half_log_det: T,
}

impl<T: Real> NetworkCost<T> {
    fn of(params: &ModelParams<T>, regime: usize) -> Result<Self> {
        let chol = nalgebra::Cholesky::new(params.networks[regime].precision.clone())
            .ok_or_else(|| Error::NotPositiveDefinite(format!("network of regime {regime}")))?;
        Ok(Self {
            half_log_det: T::lit(0.5) * log_det(&chol),
        })
    }

    fn cost(&self, params: &ModelParams<T>, regime: usize, x_hat: &DVector<T>) -> T {
        let net = &params.networks[regime];
        let d = x_hat - &net.mean;
        let n = T::from_usize_lossy(d.len());
        let half = T::lit(0.5);
        half * d.dot(&(&net.precision * &d)) - self.half_log_det + half * n * ln_2pi::<T>()
    }
}

fn innovation_cost<T: Real>(inn: Option<Innovation<T>>, latent_dim: usize) -> T {
    match inn {
        // An unobserved timestep carries no measurement information.
        None => T::zero(),
        Some(i) => {
            let half = T::lit(0.5);
            half * i.mahalanobis + half * i.log_det
                + half * T::from_usize_lossy(latent_dim) * ln_2pi::<T>()
        }
    }
}

fn transition_cost<T: Real>(p: T) -> T {
    if p > T::zero() {
        -p.ln()
    } else {
        T::lit(f64::INFINITY)
    }
}

/// Cost of landing in `regime` at `t` given the filtered cell for that move.
///
/// `from` is the regime at `t - 1`, or `None` at the first timestep where
/// the initial distribution `pi` applies. `x_hat` is the imputed column at `t`
/// from the previous iteration. Lower is better; a zero transition
/// probability yields `+inf`.
#[allow(clippy::too_many_arguments)]
pub fn partial_cost<T: Real>(
    cell: &FilterCell<T>,
    regime: usize,
    from: Option<usize>,
    series: &PartialSeries<T>,
    params: &ModelParams<T>,
    obs: &DMatrix<T>,
    x_hat: &DVector<T>,
    t: usize,
) -> Result<T> {
    let (_, inn) = measurement_update(
        cell.mean_pred.clone(),
        cell.cov_pred.clone(),
        obs,
        params.var_x[regime],
        series,
        t,
    )?;
    let net = &params.networks[regime];
    let network = -gaussian_ll(x_hat, &net.mean, &net.precision)?;
    let p = match from {
        Some(l) => params.markov[(regime, l)],
        None => params.pi[regime],
    };
    Ok(innovation_cost(inn, params.latent_dim()) + network + transition_cost(p))
}

/// Viterbi decoding of the regime path.
///
/// At each timestep and for each regime only the filtered cell of the best
/// incoming transition survives. Ties go to the lowest regime index.
pub fn viterbi_decode<T: Real>(
    series: &PartialSeries<T>,
    params: &ModelParams<T>,
    obs: &[DMatrix<T>],
    imputed: &DMatrix<T>,
) -> Result<ViterbiOutput<T>> {
    let k_count = params.num_regimes();
    let len = series.len();
    let l_dim = params.latent_dim();
    if obs.len() != k_count {
        return Err(Error::Dimension("one observation matrix per regime required".into()));
    }
    if imputed.shape() != (series.num_features(), len) {
        return Err(Error::Dimension("imputed matrix must be N x T".into()));
    }
    let net_costs = (0..k_count)
        .map(|k| NetworkCost::of(params, k))
        .collect::<Result<Vec<_>>>()?;
    let inf = T::lit(f64::INFINITY);

    let mut cost = DMatrix::from_element(len, k_count, inf);
    let mut backptr = DMatrix::from_element(len, k_count, 0usize);
    let mut partial = Vec::with_capacity(len);
    let mut filtered: Vec<Vec<FilterCell<T>>> = Vec::with_capacity(len);

    let x0 = imputed.column(0).into_owned();
    let mut first = Vec::with_capacity(k_count);
    let mut part0 = DMatrix::from_element(k_count, k_count, inf);
    for k in 0..k_count {
        let (cell, inn) = measurement_update(
            params.z0.clone(),
            params.psi0.clone(),
            &obs[k],
            params.var_x[k],
            series,
            0,
        )?;
        let c = innovation_cost(inn, l_dim)
            + net_costs[k].cost(params, k, &x0)
            + transition_cost(params.pi[k]);
        for l in 0..k_count {
            part0[(k, l)] = c;
        }
        cost[(0, k)] = c;
        first.push(cell);
    }
    partial.push(part0);
    filtered.push(first);

    for t in 1..len {
        let x_t = imputed.column(t).into_owned();
        let mut part = DMatrix::from_element(k_count, k_count, inf);
        let mut row = Vec::with_capacity(k_count);
        for k in 0..k_count {
            let net = net_costs[k].cost(params, k, &x_t);
            let mut best: Option<(T, usize, FilterCell<T>)> = None;
            for l in 0..k_count {
                let prev_cost = cost[(t - 1, l)];
                let trans = transition_cost(params.markov[(k, l)]);
                if !prev_cost.finite() || !trans.finite() {
                    continue;
                }
                let (mean_pred, cov_pred) = predict(&filtered[t - 1][l], params);
                let (cell, inn) =
                    measurement_update(mean_pred, cov_pred, &obs[k], params.var_x[k], series, t)?;
                let delta = innovation_cost(inn, l_dim) + net + trans;
                part[(k, l)] = delta;
                let total = prev_cost + delta;
                if best.as_ref().is_none_or(|(b, _, _)| total < *b) {
                    best = Some((total, l, cell));
                }
            }
            match best {
                Some((total, l, cell)) => {
                    cost[(t, k)] = total;
                    backptr[(t, k)] = l;
                    row.push(cell);
                }
                None => {
                    // Unreachable regime: keep a placeholder cell so indices line up.
                    let (mean_pred, cov_pred) = predict(&filtered[t - 1][0], params);
                    row.push(FilterCell {
                        mean_filt: mean_pred.clone(),
                        cov_filt: cov_pred.clone(),
                        mean_pred,
                        cov_pred,
                        gain: DMatrix::zeros(l_dim, 0),
                    });
                }
            }
        }
        if (0..k_count).all(|k| !cost[(t, k)].finite()) {
            return Err(Error::NonFinite(format!("every regime unreachable at timestep {t}")));
        }
        partial.push(part);
        filtered.push(row);
    }

    let last = len - 1;
    let mut best_k = 0;
    for k in 1..k_count {
        if cost[(last, k)] < cost[(last, best_k)] {
            best_k = k;
        }
    }
    let total_cost = cost[(last, best_k)];
    if !total_cost.finite() {
        return Err(Error::NonFinite("viterbi path cost".into()));
    }
    let mut assignments = vec![0; len];
    assignments[last] = best_k;
    for t in (1..len).rev() {
        assignments[t - 1] = backptr[(t, assignments[t])];
    }

    let mut means = Vec::with_capacity(len);
    let mut covs = Vec::with_capacity(len);
    let mut pred_covs = Vec::with_capacity(len);
    for (t, &k) in assignments.iter().enumerate() {
        let cell = &filtered[t][k];
        means.push(cell.mean_filt.clone());
        covs.push(cell.cov_filt.clone());
        pred_covs.push(cell.cov_pred.clone());
    }

    Ok(ViterbiOutput {
        path: RegimePath::new(assignments, k_count)?,
        filtered: FilteredPath {
            means,
            covs,
            pred_covs,
        },
        total_cost,
        table: ViterbiTable {
            cost,
            backptr,
            partial,
            filtered,
        },
    })
}

/// Kalman filter along a fixed regime path. Returns the filtered moments and
/// the path's total cost on the same scale as [`viterbi_decode`].
pub fn filter_along_path<T: Real>(
    series: &PartialSeries<T>,
    params: &ModelParams<T>,
    obs: &[DMatrix<T>],
    imputed: &DMatrix<T>,
    path: &RegimePath,
) -> Result<(FilteredPath<T>, T)> {
    let len = series.len();
    if path.len() != len || path.num_regimes() != params.num_regimes() || obs.len() != params.num_regimes() {
        return Err(Error::Dimension("path, parameters and series disagree".into()));
    }
    if imputed.shape() != (series.num_features(), len) {
        return Err(Error::Dimension("imputed matrix must be N x T".into()));
    }
    let l_dim = params.latent_dim();
    let net_costs = (0..params.num_regimes())
        .map(|k| NetworkCost::of(params, k))
        .collect::<Result<Vec<_>>>()?;
    let mut means = Vec::with_capacity(len);
    let mut covs = Vec::with_capacity(len);
    let mut pred_covs = Vec::with_capacity(len);
    let mut total = T::zero();
    let mut prev: Option<FilterCell<T>> = None;
    for t in 0..len {
        let k = path.get(t);
        let (mean_pred, cov_pred, p) = match &prev {
            None => (params.z0.clone(), params.psi0.clone(), params.pi[k]),
            Some(cell) => {
                let (m, c) = predict(cell, params);
                (m, c, params.markov[(k, path.get(t - 1))])
            }
        };
        let (cell, inn) = measurement_update(mean_pred, cov_pred, &obs[k], params.var_x[k], series, t)?;
        total += innovation_cost(inn, l_dim)
            + net_costs[k].cost(params, k, &imputed.column(t).into_owned())
            + transition_cost(p);
        means.push(cell.mean_filt.clone());
        covs.push(cell.cov_filt.clone());
        pred_covs.push(cell.cov_pred.clone());
        prev = Some(cell);
    }
    Ok((
        FilteredPath {
            means,
            covs,
            pred_covs,
        },
        total,
    ))
}

/// RTS smoother over a filtered path.
pub fn rts_smooth<T: Real>(filtered: &FilteredPath<T>, params: &ModelParams<T>) -> Result<SmoothedPosterior<T>> {
    let len = filtered.means.len();
    if len == 0 || filtered.covs.len() != len || filtered.pred_covs.len() != len {
        return Err(Error::Dimension("filtered path is empty or ragged".into()));
    }
    let l = params.latent_dim();
    let b = &params.transition;

    let mut mean = vec![DVector::zeros(l); len];
    let mut cov = vec![DMatrix::zeros(l, l); len];
    // J_t for t = 0..len-1; the last one is never used.
    let mut gains = vec![DMatrix::zeros(l, l); len];
    mean[len - 1] = filtered.means[len - 1].clone();
    cov[len - 1] = filtered.covs[len - 1].clone();

    for t in (0..len - 1).rev() {
        let p_next = &filtered.pred_covs[t + 1];
        let chol = cholesky_jittered(p_next)?;
        // J = psi_t B' P^-1  =>  J' = P^-1 B psi_t
        let j = chol.solve(&(b * &filtered.covs[t])).transpose();
        let m = &filtered.means[t] + &j * (&mean[t + 1] - b * &filtered.means[t]);
        let c = symmetrized(&filtered.covs[t] + &j * (&cov[t + 1] - p_next) * j.transpose());
        mean[t] = m;
        cov[t] = c;
        gains[t] = j;
    }

    let mut mean_mat = DMatrix::zeros(l, len);
    for (t, m) in mean.iter().enumerate() {
        mean_mat.set_column(t, m);
    }
    let second: Vec<_> = (0..len)
        .map(|t| symmetrized(&cov[t] + &mean[t] * mean[t].transpose()))
        .collect();
    let cross: Vec<_> = (0..len)
        .map(|t| {
            if t == 0 {
                DMatrix::zeros(l, l)
            } else {
                &cov[t] * gains[t - 1].transpose() + &mean[t] * mean[t - 1].transpose()
            }
        })
        .collect();
    Ok(SmoothedPosterior {
        mean: mean_mat,
        cov,
        cross,
        second,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Network;

    fn scalar_params(b: f64, var_z: f64, var_x: f64, z0: f64, psi0: f64) -> ModelParams<f64> {
        ModelParams {
            transition: DMatrix::from_element(1, 1, b),
            z0: DVector::from_element(1, z0),
            psi0: DMatrix::from_element(1, 1, psi0),
            var_z,
            var_x: vec![var_x],
            var_s: vec![1.0],
            var_v: vec![1.0],
            networks: vec![Network::identity(DVector::zeros(1))],
            pi: DVector::from_element(1, 1.0),
            markov: DMatrix::from_element(1, 1, 1.0),
        }
    }

    fn scalar_series(xs: &[Option<f64>]) -> PartialSeries<f64> {
        PartialSeries::from_options(1, xs.len(), |_, t| xs[t]).unwrap()
    }

    fn cell(mean: f64, cov: f64) -> FilterCell<f64> {
        FilterCell {
            mean_pred: DVector::from_element(1, mean),
            mean_filt: DVector::from_element(1, mean),
            cov_pred: DMatrix::from_element(1, 1, cov),
            cov_filt: DMatrix::from_element(1, 1, cov),
            gain: DMatrix::zeros(1, 0),
        }
    }

    #[test]
    fn empty_observation_keeps_prediction() {
        let p = scalar_params(0.9, 0.01, 0.25, 0.0, 1.0);
        let s = scalar_series(&[Some(1.0), None]);
        let u = DMatrix::from_element(1, 1, 1.0);
        let c = filter_step(&cell(1.0, 0.2), 0, &s, &p, &u, 1).unwrap();
        assert!((c.mean_filt[0] - 0.9).abs() < 1e-15);
        assert!((c.cov_filt[(0, 0)] - (0.81 * 0.2 + 0.01)).abs() < 1e-15);
        assert_eq!(c.gain.ncols(), 0);
    }

    #[test]
    fn exact_measurement_limit() {
        let p = scalar_params(1.0, 0.0, 1e-12, 0.0, 1.0);
        let s = scalar_series(&[Some(0.0), Some(3.0)]);
        let u = DMatrix::from_element(1, 1, 1.0);
        let c = filter_step(&cell(1.0, 0.5), 0, &s, &p, &u, 1).unwrap();
        assert!((c.mean_filt[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn scalar_kalman_by_hand() {
        // B=0.9, var_z=0.01, var_x=0.25, prev (1.0, 0.2), x=2
        let p = scalar_params(0.9, 0.01, 0.25, 0.0, 1.0);
        let s = scalar_series(&[Some(0.0), Some(2.0)]);
        let u = DMatrix::from_element(1, 1, 1.0);
        let c = filter_step(&cell(1.0, 0.2), 0, &s, &p, &u, 1).unwrap();
        let p_pred = 0.9 * 0.2 * 0.9 + 0.01; // 0.172
        let k = p_pred / (p_pred + 0.25);
        let m = 0.9 + k * (2.0 - 0.9);
        let v = (1.0 - k) * p_pred;
        assert!((c.mean_pred[0] - 0.9).abs() < 1e-12);
        assert!((c.cov_pred[(0, 0)] - p_pred).abs() < 1e-12);
        assert!((c.gain[(0, 0)] - k).abs() < 1e-12);
        assert!((c.mean_filt[0] - m).abs() < 1e-12);
        assert!((c.cov_filt[(0, 0)] - v).abs() < 1e-12);
    }

    #[test]
    fn initial_step_by_hand() {
        let p = scalar_params(1.0, 1.0, 1.0, 0.0, 1.0);
        let s = scalar_series(&[Some(2.0), None]);
        let u = DMatrix::from_element(1, 1, 1.0);
        let c = initial_step(0, &s, &p, &u).unwrap();
        assert!((c.gain[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((c.mean_filt[0] - 1.0).abs() < 1e-15);
        assert!((c.cov_filt[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn initial_step_missing_or_zero_prior() {
        let u = DMatrix::from_element(1, 1, 1.0);
        let p = scalar_params(1.0, 1.0, 1.0, 0.7, 2.0);
        let c = initial_step(0, &scalar_series(&[None, Some(1.0)]), &p, &u).unwrap();
        assert_eq!(c.mean_filt[0], 0.7);
        assert_eq!(c.cov_filt[(0, 0)], 2.0);

        let p = scalar_params(1.0, 1.0, 1.0, 0.7, 0.0);
        let c = initial_step(0, &scalar_series(&[Some(5.0), None]), &p, &u).unwrap();
        assert!((c.mean_filt[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn certain_transition_costs_nothing() {
        let p = scalar_params(1.0, 1.0, 1.0, 0.0, 1.0);
        let s = scalar_series(&[None, None]);
        let u = DMatrix::from_element(1, 1, 1.0);
        let x_hat = DVector::zeros(1);
        let c = partial_cost(&cell(0.0, 1.0), 0, Some(0), &s, &p, &u, &x_hat, 1).unwrap();
        // Only the network term remains: -ll(0; 0, 1).
        assert!((c - 0.5 * std::f64::consts::TAU.ln()).abs() < 1e-14);
    }

    #[test]
    fn scalar_partial_cost_formula() {
        let mut p = scalar_params(0.8, 0.3, 0.5, 0.0, 1.0);
        p.networks[0] = Network::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 0.1)).unwrap();
        let s = scalar_series(&[Some(0.0), Some(1.5)]);
        let u = DMatrix::from_element(1, 1, 1.2);
        let prev = cell(0.4, 0.6);
        let next = filter_step(&prev, 0, &s, &p, &u, 1).unwrap();
        let x_hat = DVector::from_element(1, 0.9);
        let got = partial_cost(&next, 0, Some(0), &s, &p, &u, &x_hat, 1).unwrap();

        let ln2pi = std::f64::consts::TAU.ln();
        let m_pred = 0.8 * 0.4;
        let p_pred: f64 = 0.64 * 0.6 + 0.3;
        let sigma = 1.2 * p_pred * 1.2 + 0.5;
        let nu = 1.5 - 1.2 * m_pred;
        let expected = 0.5 * nu * nu / sigma + 0.5 * sigma.ln() + 0.5 * ln2pi
            + 0.5 * 2.0 * (0.9 - 0.1f64).powi(2) - 0.5 * 2.0f64.ln() + 0.5 * ln2pi;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_transition_is_infinite() {
        let mut p = scalar_params(1.0, 1.0, 1.0, 0.0, 1.0);
        p.markov = DMatrix::from_element(1, 1, 0.0);
        let s = scalar_series(&[None, None]);
        let u = DMatrix::from_element(1, 1, 1.0);
        let c = partial_cost(&cell(0.0, 1.0), 0, Some(0), &s, &p, &u, &DVector::zeros(1), 1).unwrap();
        assert!(c.is_infinite() && c > 0.0);
    }

    #[test]
    fn single_regime_path_is_all_zero() {
        let p = scalar_params(1.0, 0.1, 0.1, 0.0, 1.0);
        let s = scalar_series(&[Some(1.0), Some(-4.0), None, Some(10.0)]);
        let u = vec![DMatrix::from_element(1, 1, 1.0)];
        let out = viterbi_decode(&s, &p, &u, s.values()).unwrap();
        assert_eq!(out.path.assignments(), &[0, 0, 0, 0]);
    }

    #[test]
    fn smoothing_single_step_is_filtering() {
        let p = scalar_params(1.0, 0.1, 0.1, 0.0, 1.0);
        let f = FilteredPath {
            means: vec![DVector::from_element(1, 0.3)],
            covs: vec![DMatrix::from_element(1, 1, 0.2)],
            pred_covs: vec![DMatrix::from_element(1, 1, 1.0)],
        };
        let sm = rts_smooth(&f, &p).unwrap();
        assert_eq!(sm.mean[(0, 0)], 0.3);
        assert_eq!(sm.cov[0][(0, 0)], 0.2);
        assert!((sm.second[0][(0, 0)] - (0.2 + 0.09)).abs() < 1e-15);
    }

    #[test]
    fn huge_process_noise_disables_smoothing() {
        let p = scalar_params(1.0, 1e12, 0.1, 0.0, 1.0);
        let s = scalar_series(&[Some(1.0), Some(2.0), Some(-1.0), Some(0.5)]);
        let u = vec![DMatrix::from_element(1, 1, 1.0)];
        let out = viterbi_decode(&s, &p, &u, s.values()).unwrap();
        let sm = rts_smooth(&out.filtered, &p).unwrap();
        for t in 0..4 {
            assert!((sm.mean[(0, t)] - out.filtered.means[t][0]).abs() < 1e-9);
        }
    }
}
