//! Imputation of multivariate time series with missing values.
//!
//! The model couples a switching linear state-space model with one sparse
//! Gaussian network per regime. Fitting alternates Viterbi decoding of the
//! regimes and Kalman smoothing of the latent state with closed-form updates
//! and a graphical lasso per regime. See [`fit`] for the entry point.
//!
//! Everything is generic over the floating-point type; [`Series`],
//! [`Params`] and friends fix it to `f64`, the `*32` aliases to `f32`.
//!
//! ```
//! use missnet::{fit, zscore, Hyperparams, PartialSeries};
//!
//! # fn main() -> missnet::Result<()> {
//! // Two features over 40 steps with one hole.
//! let series = PartialSeries::from_options(2, 40, |i, t| {
//!     let v = (0.3 * t as f64 + i as f64).sin();
//!     ((i, t) != (1, 17)).then_some(v)
//! })?;
//! let (scaled, stats) = zscore(&series)?;
//! let hyper = Hyperparams { latent_dim: 2, ..Hyperparams::default() };
//! let result = fit(&scaled, &hyper)?;
//! let imputed = stats.invert(&result.imputed);
//! assert!(imputed[(1, 17)].is_finite());
//! // Observed entries come back up to the rounding of the z-score round trip.
//! assert!((imputed[(0, 17)] - series.values()[(0, 17)]).abs() < 1e-12);
//! # Ok(())
//! # }
//! ```

// `!(x > 0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod cluster;
pub mod contextual;
pub mod em;
pub mod error;
pub mod eval;
pub mod glasso;
pub mod linalg;
pub mod scalar;
pub mod ssm;
pub mod synth;
pub mod types;

pub use bench::{scaling_table, BenchConfig, BenchRow};
pub use em::{fit, fit_with_observer, initialize, linear_interpolation, sweep_num_regimes, FitReport, FitResult, Fitter};
pub use error::{Error, Result};
pub use eval::{regime_accuracy, rmse};
pub use glasso::{graphical_lasso, GlassoConfig};
pub use scalar::Real;
pub use synth::{generate_dataset, inject_missing, zscore, Pattern, SynthSpec, ZScore};
pub use types::{Hyperparams, LatentFactors, ModelParams, Network, PartialSeries, PathInit, RegimePath, SmoothedPosterior};

pub type Series = PartialSeries<f64>;
pub type Params = ModelParams<f64>;
pub type Latents = LatentFactors<f64>;
pub type Fit = FitResult<f64>;

pub type Series32 = PartialSeries<f32>;
pub type Params32 = ModelParams<f32>;
pub type Latents32 = LatentFactors<f32>;
pub type Fit32 = FitResult<f32>;
