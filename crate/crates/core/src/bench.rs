//! Wall-clock timing of EM iterations against the series length.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::em::Fitter;
use crate::error::Result;
use crate::scalar::Real;
use crate::synth::{generate_dataset, inject_missing, zscore, Pattern, SynthSpec};
use crate::types::{Hyperparams, PartialSeries};

/// Settings of [`scaling_table`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub num_features: usize,
    pub latent_dim: usize,
    pub missing_rate: f64,
    /// Untimed iterations run first so the solver state settles.
    pub warmup: usize,
    /// Timed iterations; the median is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            num_features: 50,
            latent_dim: 10,
            missing_rate: 0.2,
            warmup: 2,
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub len: usize,
    /// Median seconds per EM iteration.
    pub seconds: f64,
    pub samples: Vec<f64>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

fn bench_series<T: Real>(len: usize, cfg: &BenchConfig) -> Result<PartialSeries<T>> {
    let spec = SynthSpec {
        len,
        num_features: cfg.num_features,
        latent_dim: cfg.latent_dim,
        ..SynthSpec::for_pattern(Pattern::A, cfg.seed)
    };
    let data = generate_dataset::<T>(&spec, Pattern::A)?;
    let observed = inject_missing(&data.clean, cfg.missing_rate, 0.05, cfg.seed.wrapping_add(1))?;
    Ok(zscore(&observed)?.0)
}

/// Times single-regime EM iterations on standardized single-regime
/// synthetic series, one per length. Timed iterations are interleaved
/// across lengths so that drifting machine load hits every length alike.
pub fn scaling_table<T: Real>(lens: &[usize], cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let hyper = Hyperparams {
        latent_dim: cfg.latent_dim,
        num_regimes: 1,
        seed: cfg.seed,
        ..Hyperparams::default()
    };
    let series = lens
        .iter()
        .map(|&len| bench_series::<T>(len, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut fitters = series
        .iter()
        .map(|s| Fitter::new(s, &hyper, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    for f in &mut fitters {
        for _ in 0..cfg.warmup {
            f.step()?;
        }
    }
    let mut samples = vec![Vec::with_capacity(cfg.repeats); lens.len()];
    for _ in 0..cfg.repeats.max(1) {
        for (f, out) in fitters.iter_mut().zip(&mut samples) {
            let start = Instant::now();
            f.step()?;
            out.push(start.elapsed().as_secs_f64());
        }
    }
    Ok(lens
        .iter()
        .zip(samples)
        .map(|(&len, samples)| BenchRow {
            len,
            seconds: median(&samples),
            samples,
        })
        .collect())
}
