//! Domain types shared by every stage of the fit.
//!
//! Layout conventions: a series is stored `N x T` (features by timesteps),
//! latent trajectories `L x T`, observation matrices `N x L`. Regimes are
//! plain `0..K` indices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glasso::GlassoConfig;
use crate::linalg::{max_abs_asymmetry, min_eigenvalue};
use crate::scalar::Real;

/// A partially observed multivariate series plus its observation mask.
///
/// Entries with `mask == false` are stored as zero and never read by the
/// fitting code.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSeries<T: Real> {
    values: DMatrix<T>,
    mask: DMatrix<bool>,
    observed: Vec<Vec<usize>>,
}

impl<T: Real> PartialSeries<T> {
    pub fn new(values: DMatrix<T>, mask: DMatrix<bool>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::Dimension(format!(
                "values are {:?} but mask is {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        let (n, t) = values.shape();
        if n < 1 {
            return Err(Error::Dimension("series needs at least one feature".into()));
        }
        if t < 2 {
            return Err(Error::Dimension(
                "series needs at least two timesteps".into(),
            ));
        }
        let mut values = values;
        for (v, &m) in values.iter_mut().zip(mask.iter()) {
            if !m {
                *v = T::zero();
            } else if !v.finite() {
                return Err(Error::NonFinite("observed value".into()));
            }
        }
        let observed = (0..t)
            .map(|c| (0..n).filter(|&r| mask[(r, c)]).collect())
            .collect();
        Ok(Self {
            values,
            mask,
            observed,
        })
    }

    pub fn fully_observed(values: DMatrix<T>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, mask)
    }

    /// Builds a series from `N x T` cells where `None` marks a missing value.
    pub fn from_options(n: usize, t: usize, mut cells: impl FnMut(usize, usize) -> Option<T>) -> Result<Self> {
        let mut values = DMatrix::zeros(n, t);
        let mut mask = DMatrix::from_element(n, t, false);
        for c in 0..t {
            for r in 0..n {
                if let Some(v) = cells(r, c) {
                    values[(r, c)] = v;
                    mask[(r, c)] = true;
                }
            }
        }
        Self::new(values, mask)
    }

    pub fn num_features(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn is_observed(&self, feature: usize, t: usize) -> bool {
        self.mask[(feature, t)]
    }

    /// Observed feature indices at `t`, ascending.
    pub fn observed_indices(&self, t: usize) -> &[usize] {
        &self.observed[t]
    }

    /// The observed-only view of column `t`: indices and their values.
    pub fn observed_slice(&self, t: usize) -> (&[usize], DVector<T>) {
        let idx = &self.observed[t];
        let x = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.values[(i, t)]));
        (idx, x)
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        1.0 - self.observed_count() as f64 / self.mask.len() as f64
    }
}

/// How the regime path is seeded before the first M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PathInit {
    /// Gaussian-mixture clustering of the interpolated columns.
    #[default]
    Mixture,
    /// `K` contiguous blocks of equal length.
    Blocks,
}

/// User-facing knobs of the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub latent_dim: usize,
    pub num_regimes: usize,
    /// Weight of the network constraint against temporal dependency.
    pub alpha: f64,
    /// Sparsity strength of the per-regime networks.
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub restarts: usize,
    pub path_init: PathInit,
    pub glasso: GlassoConfig,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            latent_dim: 10,
            num_regimes: 1,
            alpha: 0.5,
            lambda: 1.0,
            max_iter: 50,
            tol: 1e-4,
            seed: 0,
            restarts: 1,
            path_init: PathInit::Mixture,
            glasso: GlassoConfig::default(),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidHyperparameter(m.to_string()));
        if self.latent_dim < 1 {
            return bad("latent_dim must be at least 1");
        }
        if self.num_regimes < 1 {
            return bad("num_regimes must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be a finite non-negative number");
        }
        if self.max_iter < 1 {
            return bad("max_iter must be at least 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.restarts < 1 {
            return bad("restarts must be at least 1");
        }
        self.glasso.validate()
    }
}

/// A regime's sparse Gaussian network: precision matrix plus mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Real> {
    pub precision: DMatrix<T>,
    pub mean: DVector<T>,
}

impl<T: Real> Network<T> {
    pub fn new(precision: DMatrix<T>, mean: DVector<T>) -> Result<Self> {
        let n = precision.nrows();
        if precision.ncols() != n || mean.len() != n {
            return Err(Error::Dimension(format!(
                "precision {:?} with mean of length {}",
                precision.shape(),
                mean.len()
            )));
        }
        if max_abs_asymmetry(&precision) > T::lit(1e-10) {
            return Err(Error::InvalidInput("precision is not symmetric".into()));
        }
        if !(min_eigenvalue(&precision) > T::zero()) {
            return Err(Error::NotPositiveDefinite("network precision".into()));
        }
        Ok(Self { precision, mean })
    }

    /// Identity precision around `mean`.
    pub fn identity(mean: DVector<T>) -> Self {
        let n = mean.len();
        Self {
            precision: DMatrix::identity(n, n),
            mean,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Per-timestep regime assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimePath {
    assignments: Vec<usize>,
    num_regimes: usize,
}

impl RegimePath {
    pub fn new(assignments: Vec<usize>, num_regimes: usize) -> Result<Self> {
        if num_regimes == 0 {
            return Err(Error::InvalidInput("num_regimes must be positive".into()));
        }
        if let Some(bad) = assignments.iter().find(|&&k| k >= num_regimes) {
            return Err(Error::InvalidInput(format!(
                "regime {bad} out of range for {num_regimes} regimes"
            )));
        }
        Ok(Self {
            assignments,
            num_regimes,
        })
    }

    /// `len` timesteps split into `num_regimes` contiguous, near-equal blocks.
    pub fn contiguous_blocks(len: usize, num_regimes: usize) -> Self {
        let assignments = (0..len).map(|t| t * num_regimes / len.max(1)).collect();
        Self {
            assignments,
            num_regimes,
        }
    }

    pub fn constant(len: usize, regime: usize, num_regimes: usize) -> Result<Self> {
        Self::new(vec![regime; len], num_regimes)
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn num_regimes(&self) -> usize {
        self.num_regimes
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn get(&self, t: usize) -> usize {
        self.assignments[t]
    }

    /// Timesteps assigned to each regime.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_regimes];
        for &k in &self.assignments {
            counts[k] += 1;
        }
        counts
    }

    /// `K x T` one-hot export.
    pub fn one_hot(&self) -> DMatrix<u8> {
        DMatrix::from_fn(self.num_regimes, self.assignments.len(), |k, t| {
            u8::from(self.assignments[t] == k)
        })
    }
}

/// Learned parameters.
///
/// Noise levels are stored as variances; `markov[(k, l)]` is the
/// probability of moving to regime `k` from regime `l`, so columns sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real> {
    pub transition: DMatrix<T>,
    pub z0: DVector<T>,
    pub psi0: DMatrix<T>,
    pub var_z: T,
    pub var_x: Vec<T>,
    pub var_s: Vec<T>,
    pub var_v: Vec<T>,
    pub networks: Vec<Network<T>>,
    pub pi: DVector<T>,
    pub markov: DMatrix<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn latent_dim(&self) -> usize {
        self.z0.len()
    }

    pub fn num_regimes(&self) -> usize {
        self.pi.len()
    }

    /// Checks shapes, the simplex constraints, and positivity of the noise.
    pub fn validate(&self, num_features: usize) -> Result<()> {
        let l = self.latent_dim();
        let k = self.num_regimes();
        if self.transition.shape() != (l, l) || self.psi0.shape() != (l, l) {
            return Err(Error::Dimension("transition/psi0 must be L x L".into()));
        }
        if self.var_x.len() != k
            || self.var_s.len() != k
            || self.var_v.len() != k
            || self.networks.len() != k
            || self.markov.shape() != (k, k)
        {
            return Err(Error::Dimension("per-regime parameter count differs from K".into()));
        }
        if self.networks.iter().any(|n| n.dim() != num_features) {
            return Err(Error::Dimension("network dimension differs from N".into()));
        }
        let tol = T::lit(1e-9);
        if (self.pi.sum() - T::one()).abs() > tol {
            return Err(Error::InvalidInput("pi does not sum to one".into()));
        }
        for c in 0..k {
            if (self.markov.column(c).sum() - T::one()).abs() > tol {
                return Err(Error::InvalidInput(format!(
                    "markov column {c} does not sum to one"
                )));
            }
        }
        let positive = |v: T| v > T::zero() && v.finite();
        if !positive(self.var_z)
            || !self.var_x.iter().all(|&v| positive(v))
            || !self.var_s.iter().all(|&v| positive(v))
            || !self.var_v.iter().all(|&v| positive(v))
        {
            return Err(Error::InvalidInput("noise variances must be positive".into()));
        }
        Ok(())
    }
}

/// Latent quantities estimated alongside the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFactors<T: Real> {
    /// `L x T` smoothed latent states.
    pub z: DMatrix<T>,
    /// Per regime, `L x N` contextual latent factors.
    pub v: Vec<DMatrix<T>>,
    /// Per regime, `N x L` observation matrices.
    pub u: Vec<DMatrix<T>>,
    /// Per regime, `N x N` contextual (partial correlation) matrices.
    pub s: Vec<DMatrix<T>>,
    pub path: RegimePath,
}

/// RTS-smoothed moments of the latent state.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedPosterior<T: Real> {
    /// `L x T`, column `t` is `E[z_t]`.
    pub mean: DMatrix<T>,
    pub cov: Vec<DMatrix<T>>,
    /// `E[z_t z_{t-1}']`; entry 0 is zero and carries no meaning.
    pub cross: Vec<DMatrix<T>>,
    /// `E[z_t z_t']`
    pub second: Vec<DMatrix<T>>,
}

impl<T: Real> SmoothedPosterior<T> {
    pub fn len(&self) -> usize {
        self.mean.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.ncols() == 0
    }

    pub fn mean_at(&self, t: usize) -> DVector<T> {
        self.mean.column(t).into_owned()
    }
}
