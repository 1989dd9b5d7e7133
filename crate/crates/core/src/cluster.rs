//! Gaussian-mixture clustering of the columns of a matrix, used to seed the
//! regime path before the first decoding pass.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, log_det, symmetrized};
use crate::scalar::{ln_2pi, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub labels: Vec<usize>,
    /// Mean log-likelihood per column.
    pub log_lik: f64,
    pub iterations: usize,
}

/// Settings of [`gaussian_mixture`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureConfig {
    pub num_inits: usize,
    pub max_iter: usize,
    /// Stop once the mean log-likelihood improves by less than this.
    pub tol: f64,
    /// Ridge added to each covariance, relative to the mean data variance.
    pub ridge: f64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            num_inits: 5,
            max_iter: 100,
            tol: 1e-6,
            ridge: 1e-6,
        }
    }
}

/// k-means++ seeding: indices of `k` columns spread out by squared distance.
fn kmeans_pp_seeds<T: Real>(x: &DMatrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = x.ncols();
    let mut seeds = vec![rng.random_range(0..m)];
    let mut d2: Vec<f64> = (0..m)
        .map(|j| (x.column(j) - x.column(seeds[0])).norm_squared().as_f64())
        .collect();
    while seeds.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (j, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = j;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..m)
        };
        seeds.push(next);
        for (j, d) in d2.iter_mut().enumerate() {
            *d = d.min((x.column(j) - x.column(next)).norm_squared().as_f64());
        }
    }
    seeds
}

/// Lloyd iterations from the given seeds.
fn kmeans_labels<T: Real>(x: &DMatrix<T>, seeds: &[usize], max_iter: usize) -> Vec<usize> {
    let (n, m) = x.shape();
    let k = seeds.len();
    let mut centers: Vec<DVector<T>> = seeds.iter().map(|&j| x.column(j).into_owned()).collect();
    let mut labels = vec![usize::MAX; m];
    for _ in 0..max_iter {
        let mut changed = false;
        for (j, label) in labels.iter_mut().enumerate() {
            let col = x.column(j);
            let best = (0..k)
                .map(|c| (c, (col - &centers[c]).norm_squared()))
                .fold((0, T::lit(f64::INFINITY)), |a, b| if b.1 < a.1 { b } else { a })
                .0;
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![DVector::<T>::zeros(n); k];
        let mut counts = vec![0usize; k];
        for (j, &c) in labels.iter().enumerate() {
            sums[c] += x.column(j);
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = &sums[c] / T::from_usize_lossy(counts[c]);
            }
        }
    }
    labels
}

/// Per-column log densities under each component, `m x k`.
fn log_densities<T: Real>(
    x: &DMatrix<T>,
    means: &[DVector<T>],
    covs: &[DMatrix<T>],
    weights: &[T],
) -> Result<DMatrix<T>> {
    let (n, m) = x.shape();
    let half = T::lit(0.5);
    let mut out = DMatrix::zeros(m, means.len());
    for (c, (mu, cov)) in means.iter().zip(covs).enumerate() {
        let chol = cholesky_jittered(cov)?;
        let mut centered = x.clone();
        for mut col in centered.column_iter_mut() {
            col -= mu;
        }
        let l = chol.l();
        let solved = l
            .solve_lower_triangular(&centered)
            .ok_or_else(|| Error::NotPositiveDefinite("mixture covariance".into()))?;
        let constant = weights[c].ln() - half * log_det(&chol) - half * T::from_usize_lossy(n) * ln_2pi::<T>();
        for j in 0..m {
            out[(j, c)] = constant - half * solved.column(j).norm_squared();
        }
    }
    Ok(out)
}

fn log_sum_exp<T: Real>(row: impl Iterator<Item = T> + Clone) -> T {
    let max = row.clone().fold(T::lit(f64::NEG_INFINITY), |a, b| a.max(b));
    if !max.finite() {
        return max;
    }
    max + row.map(|v| (v - max).exp()).fold(T::zero(), |a, b| a + b).ln()
}

/// One EM run of a full-covariance mixture started from hard labels.
fn mixture_from_labels<T: Real>(x: &DMatrix<T>, k: usize, init: Vec<usize>, cfg: &MixtureConfig) -> Result<MixtureFit> {
    let (n, m) = x.shape();
    let scale = {
        let mean = x.column_mean();
        let mut var = T::zero();
        for col in x.column_iter() {
            var += (col - &mean).norm_squared();
        }
        (var / T::from_usize_lossy(n * m)).max(T::lit(1e-12))
    };
    let ridge = scale * T::lit(cfg.ridge);
    let mut resp = DMatrix::<T>::zeros(m, k);
    for (j, &c) in init.iter().enumerate() {
        resp[(j, c)] = T::one();
    }
    let mut prev = f64::NEG_INFINITY;
    let mut log_lik = prev;
    let mut iterations = 0;
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        let mut weights = Vec::with_capacity(k);
        for c in 0..k {
            let r = resp.column(c);
            let total = r.sum();
            if total < T::lit(1e-8) {
                return Err(Error::EmptyRegime);
            }
            let mu = x * r / total;
            let mut centered = x.clone();
            for (j, mut col) in centered.column_iter_mut().enumerate() {
                col -= &mu;
                col *= r[j].sqrt();
            }
            let mut cov = &centered * centered.transpose() / total;
            for i in 0..n {
                cov[(i, i)] += ridge;
            }
            means.push(mu);
            covs.push(symmetrized(cov));
            weights.push(total / T::from_usize_lossy(m));
        }
        let dens = log_densities(x, &means, &covs, &weights)?;
        let mut sum = 0.0;
        for j in 0..m {
            let row = dens.row(j);
            let lse = log_sum_exp(row.iter().copied());
            sum += lse.as_f64();
            for c in 0..k {
                resp[(j, c)] = (row[c] - lse).exp();
            }
        }
        log_lik = sum / m as f64;
        if !log_lik.is_finite() {
            return Err(Error::NonFinite("mixture log-likelihood".into()));
        }
        if log_lik - prev < cfg.tol {
            break;
        }
        prev = log_lik;
    }
    let labels = (0..m)
        .map(|j| {
            let row = resp.row(j);
            (0..k).fold(0, |best, c| if row[c] > row[best] { c } else { best })
        })
        .collect();
    Ok(MixtureFit {
        labels,
        log_lik,
        iterations,
    })
}

/// Clusters the columns of `x` into `k` groups with a full-covariance
/// Gaussian mixture, seeded by k-means++ and Lloyd iterations. The run with
/// the highest likelihood wins; runs that lose a component are skipped.
pub fn gaussian_mixture<T: Real>(
    x: &DMatrix<T>,
    k: usize,
    cfg: &MixtureConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MixtureFit> {
    let m = x.ncols();
    if k == 0 || m < k {
        return Err(Error::InvalidInput(format!("cannot split {m} columns into {k} clusters")));
    }
    if k == 1 {
        return Ok(MixtureFit {
            labels: vec![0; m],
            log_lik: 0.0,
            iterations: 0,
        });
    }
    let mut best: Option<MixtureFit> = None;
    for _ in 0..cfg.num_inits.max(1) {
        let seeds = kmeans_pp_seeds(x, k, rng);
        let labels = kmeans_labels(x, &seeds, cfg.max_iter);
        match mixture_from_labels(x, k, labels, cfg) {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.log_lik > b.log_lik) {
                    best = Some(fit);
                }
            }
            Err(e) if e.is_numeric() => continue,
            Err(e) => return Err(e),
        }
    }
    best.ok_or(Error::EmptyRegime)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let x = DMatrix::from_fn(3, 60, |i, j| {
            let center = if j % 3 == 0 { 4.0 } else { -1.0 };
            center * (i as f64 + 1.0) + noise.sample(&mut rng)
        });
        let fit = gaussian_mixture(&x, 2, &MixtureConfig::default(), &mut rng).unwrap();
        for j in 0..60 {
            assert_eq!(fit.labels[j] == fit.labels[0], j % 3 == 0);
        }
    }

    #[test]
    fn single_cluster_is_trivial() {
        let x = DMatrix::<f64>::zeros(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(gaussian_mixture(&x, 1, &MixtureConfig::default(), &mut rng).unwrap().labels, vec![0; 5]);
        assert!(gaussian_mixture(&x, 6, &MixtureConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn seeds_are_distinct_points() {
        let x = DMatrix::from_fn(1, 10, |_, j| if j < 5 { 0.0 } else { 10.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = kmeans_pp_seeds(&x, 2, &mut rng);
        assert_ne!(x[(0, s[0])], x[(0, s[1])]);
    }
}
