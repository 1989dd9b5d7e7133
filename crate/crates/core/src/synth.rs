//! Synthetic datasets with known regimes, missing-block injection, and
//! per-feature standardization.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::types::{PartialSeries, RegimePath};

/// Name of the generator behind every seeded draw in this module.
pub const RNG_ALGORITHM: &str = "ChaCha8";

/// How the `0.3` in the latent noise term is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NoiseScale {
    /// Noise variance is `noise_level`.
    #[default]
    Variance,
    /// Noise standard deviation is `noise_level`.
    StdDev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pattern {
    /// One regime.
    A,
    /// Two regimes alternating every `switch_period` steps.
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub len: usize,
    pub num_features: usize,
    pub latent_dim: usize,
    pub num_regimes: usize,
    pub switch_period: usize,
    pub seed: u64,
    pub noise_level: f64,
    pub noise_scale: NoiseScale,
    /// Set to false to drop the linear trend.
    pub trend: bool,
    /// Probability that a loading entry is nonzero.
    pub edge_prob: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            len: 1000,
            num_features: 50,
            latent_dim: 10,
            num_regimes: 1,
            switch_period: 200,
            seed: 0,
            noise_level: 0.3,
            noise_scale: NoiseScale::Variance,
            trend: true,
            edge_prob: 0.2,
        }
    }
}

impl SynthSpec {
    /// Defaults with the regime count matching `pattern`.
    pub fn for_pattern(pattern: Pattern, seed: u64) -> Self {
        let num_regimes = match pattern {
            Pattern::A => 1,
            Pattern::B => 2,
        };
        Self {
            num_regimes,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.len < 2 || self.num_features == 0 || self.latent_dim == 0 || self.num_regimes == 0 {
            return Err(Error::InvalidInput("synthetic dimensions must be positive (len >= 2)".into()));
        }
        if self.switch_period == 0 {
            return Err(Error::InvalidInput("switch_period must be positive".into()));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::InvalidInput("noise_level must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::InvalidInput("edge_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn noise_std(&self) -> f64 {
        match self.noise_scale {
            NoiseScale::Variance => self.noise_level.sqrt(),
            NoiseScale::StdDev => self.noise_level,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset<T: Real> {
    /// `N x T`
    pub clean: DMatrix<T>,
    /// `L x T`
    pub latent: DMatrix<T>,
    pub obs_matrices: Vec<DMatrix<T>>,
    pub true_path: RegimePath,
}

/// Each row is `sin(2 pi beta t / T) + gamma t + eta_t` for `t = 1..=T`, with
/// `beta ~ U(1, 20)`, `|gamma| ~ U(0.3, 1)` of random sign, and Gaussian `eta`.
pub fn generate_latent<T: Real>(spec: &SynthSpec) -> Result<DMatrix<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(latent_with(spec, &mut rng))
}

fn latent_with<T: Real>(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> DMatrix<T> {
    let (l, len) = (spec.latent_dim, spec.len);
    let noise = Normal::new(0.0, spec.noise_std()).expect("finite nonnegative std");
    let mut z = DMatrix::zeros(l, len);
    for i in 0..l {
        let beta: f64 = rng.random_range(1.0..20.0);
        let magnitude: f64 = rng.random_range(0.3..1.0);
        let gamma = if spec.trend {
            if rng.random_bool(0.5) {
                magnitude
            } else {
                -magnitude
            }
        } else {
            0.0
        };
        for t in 0..len {
            let step = (t + 1) as f64;
            let season = (std::f64::consts::TAU * beta / len as f64 * step).sin();
            z[(i, t)] = T::lit(season + gamma * step + noise.sample(rng));
        }
    }
    z
}

/// Sparse loading matrix: each entry is nonzero with probability `edge_prob`
/// and then uniform on `[-0.6, -0.3] U [0.3, 0.6]`.
pub fn generate_observation_matrix<T: Real>(n: usize, l: usize, edge_prob: f64, seed: u64) -> Result<DMatrix<T>> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::InvalidInput("edge_prob must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(observation_matrix_with(n, l, edge_prob, &mut rng))
}

fn observation_matrix_with<T: Real>(n: usize, l: usize, edge_prob: f64, rng: &mut ChaCha8Rng) -> DMatrix<T> {
    DMatrix::from_fn(n, l, |_, _| {
        if !rng.random_bool(edge_prob) {
            return T::zero();
        }
        let w: f64 = rng.random_range(0.3..=0.6);
        T::lit(if rng.random_bool(0.5) { w } else { -w })
    })
}

/// Latent factors shared by all regimes, one loading matrix per regime.
pub fn generate_dataset<T: Real>(spec: &SynthSpec, pattern: Pattern) -> Result<SynthDataset<T>> {
    spec.validate()?;
    let expected = match pattern {
        Pattern::A => 1,
        Pattern::B => 2,
    };
    if spec.num_regimes != expected {
        return Err(Error::InvalidInput(format!(
            "pattern {pattern:?} needs {expected} regime(s), spec has {}",
            spec.num_regimes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let latent: DMatrix<T> = latent_with(spec, &mut rng);
    let obs_matrices: Vec<DMatrix<T>> = (0..expected)
        .map(|_| observation_matrix_with(spec.num_features, spec.latent_dim, spec.edge_prob, &mut rng))
        .collect();
    let assignments = (0..spec.len).map(|t| (t / spec.switch_period) % expected).collect();
    let true_path = RegimePath::new(assignments, expected)?;
    let mut clean = DMatrix::zeros(spec.num_features, spec.len);
    for t in 0..spec.len {
        clean.set_column(t, &(&obs_matrices[true_path.get(t)] * latent.column(t)));
    }
    Ok(SynthDataset {
        clean,
        latent,
        obs_matrices,
        true_path,
    })
}

/// Hides random single-feature blocks until at least `target_rate` of the
/// entries are missing. Block lengths are uniform on
/// `[1, max(1, floor(max_block_frac T))]`; blocks may overlap and are clipped
/// at the series end.
pub fn inject_missing<T: Real>(
    clean: &DMatrix<T>,
    target_rate: f64,
    max_block_frac: f64,
    seed: u64,
) -> Result<PartialSeries<T>> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::InvalidInput(format!("target rate {target_rate} must lie in (0, 1)")));
    }
    if !(max_block_frac > 0.0 && max_block_frac <= 1.0) {
        return Err(Error::InvalidInput("max_block_frac must lie in (0, 1]".into()));
    }
    let (n, len) = clean.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_block = ((max_block_frac * len as f64).floor() as usize).max(1);
    let mut mask = DMatrix::from_element(n, len, true);
    let total = n * len;
    let target = (target_rate * total as f64).ceil() as usize;
    let mut missing = 0usize;
    while missing < target {
        let i = rng.random_range(0..n);
        let start = rng.random_range(0..len);
        let block = rng.random_range(1..=max_block);
        for t in start..(start + block).min(len) {
            if mask[(i, t)] {
                mask[(i, t)] = false;
                missing += 1;
            }
        }
    }
    PartialSeries::new(clean.clone(), mask)
}

/// Hides an extra `rate` share of all entries, drawn uniformly from the
/// currently observed ones. Returns the reduced series and the mask of the
/// newly hidden entries.
pub fn add_tuning_mask<T: Real>(
    series: &PartialSeries<T>,
    rate: f64,
    seed: u64,
) -> Result<(PartialSeries<T>, DMatrix<bool>)> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidInput(format!("tuning rate {rate} must lie in (0, 1)")));
    }
    let (n, len) = (series.num_features(), series.len());
    let observed: Vec<(usize, usize)> = (0..len)
        .flat_map(|t| series.observed_indices(t).iter().map(move |&i| (i, t)))
        .collect();
    let wanted = ((rate * (n * len) as f64).round() as usize).clamp(1, observed.len().saturating_sub(1).max(1));
    if observed.len() < 2 {
        return Err(Error::InvalidInput("too few observed entries to hold any out".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = series.mask().clone();
    let mut held = DMatrix::from_element(n, len, false);
    for k in sample(&mut rng, observed.len(), wanted) {
        let (i, t) = observed[k];
        mask[(i, t)] = false;
        held[(i, t)] = true;
    }
    Ok((PartialSeries::new(series.values().clone(), mask)?, held))
}

/// Smallest standard deviation used when standardizing.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScore {
    pub fn apply<T: Real>(&self, m: &DMatrix<T>) -> DMatrix<T> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, t| {
            (m[(i, t)] - T::lit(self.mean[i])) / T::lit(self.std[i])
        })
    }

    pub fn invert<T: Real>(&self, m: &DMatrix<T>) -> DMatrix<T> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, t| {
            m[(i, t)] * T::lit(self.std[i]) + T::lit(self.mean[i])
        })
    }
}

/// Standardizes each feature with statistics of its observed entries
/// (population standard deviation). Unobserved features get mean 0, std 1.
pub fn zscore<T: Real>(series: &PartialSeries<T>) -> Result<(PartialSeries<T>, ZScore)> {
    let (n, len) = (series.num_features(), series.len());
    let mut mean = vec![0.0; n];
    let mut std = vec![1.0; n];
    for i in 0..n {
        let vals: Vec<f64> = (0..len)
            .filter(|&t| series.is_observed(i, t))
            .map(|t| series.values()[(i, t)].as_f64())
            .collect();
        if vals.is_empty() {
            log::warn!("feature {i} has no observed values; left unscaled");
            continue;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
        let s = var.sqrt();
        if s < STD_FLOOR {
            log::warn!("feature {i} is constant; standard deviation floored");
        }
        mean[i] = m;
        std[i] = s.max(STD_FLOOR);
    }
    let z = ZScore { mean, std };
    let values = z.apply(series.values());
    Ok((PartialSeries::new(values, series.mask().clone())?, z))
}
