//! Scoring of imputations and recovered regime paths.

use nalgebra::DMatrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::types::RegimePath;

/// Root mean squared error over the entries selected by `eval_mask`.
pub fn rmse<T: Real>(truth: &DMatrix<T>, imputed: &DMatrix<T>, eval_mask: &DMatrix<bool>) -> Result<T> {
    if truth.shape() != imputed.shape() || truth.shape() != eval_mask.shape() {
        return Err(Error::Dimension(format!(
            "truth {:?}, imputed {:?} and mask {:?} differ",
            truth.shape(),
            imputed.shape(),
            eval_mask.shape()
        )));
    }
    let mut sum = T::zero();
    let mut count = 0usize;
    for ((&a, &b), &m) in truth.iter().zip(imputed.iter()).zip(eval_mask.iter()) {
        if m {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("evaluation mask selects no entries".into()));
    }
    Ok((sum / T::from_usize_lossy(count)).sqrt())
}

/// Fraction of timesteps on which the paths agree under the best relabeling
/// of the estimated regimes.
pub fn regime_accuracy(truth: &RegimePath, estimate: &RegimePath, num_regimes: usize) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::Dimension(format!(
            "paths have lengths {} and {}",
            truth.len(),
            estimate.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput("paths are empty".into()));
    }
    let k = num_regimes.max(truth.num_regimes()).max(estimate.num_regimes());
    // overlap[(est, true)]
    let mut overlap = Matrix::new(k, k, 0i64);
    for (&a, &b) in truth.assignments().iter().zip(estimate.assignments()) {
        overlap[(b, a)] += 1;
    }
    let (matched, _) = kuhn_munkres(&overlap);
    Ok(matched as f64 / truth.len() as f64)
}
