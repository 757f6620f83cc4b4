use serde::{Deserialize, Serialize};

use crate::linalg::DenseMatrix;

/// Observation-noise variance attached to a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseVariance {
    /// One variance for every task (multi-task models).
    Shared(f64),
    /// One variance per task (single-task models); NaN marks a failed task.
    PerTask(Vec<f64>),
}

impl NoiseVariance {
    pub fn at(&self, task: usize) -> f64 {
        match self {
            NoiseVariance::Shared(v) => *v,
            NoiseVariance::PerTask(v) => v[task],
        }
    }
}

/// Per-sample, per-task predictive mean and latent variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    /// `N* × T` predictive means.
    pub mean: DenseMatrix,
    /// `N* × T` diagonal of the latent predictive covariance (noise excluded).
    pub variance_diag: DenseMatrix,
    pub noise_variance: NoiseVariance,
}

/// Entries of a computed variance below this are treated as a hard failure.
pub const NEGATIVE_VARIANCE_TOLERANCE: f64 = 1e-8;

/// Clamps round-off negatives to zero; `None` if any entry is below
/// `-NEGATIVE_VARIANCE_TOLERANCE` (scaled by the prior variance).
pub(crate) fn clamp_variance(v: &mut DenseMatrix, prior_scale: f64) -> Option<()> {
    let tol = NEGATIVE_VARIANCE_TOLERANCE * prior_scale.max(1.0);
    for x in v.iter_mut() {
        if x.is_nan() {
            continue;
        }
        if *x < -tol {
            return None;
        }
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    Some(())
}
