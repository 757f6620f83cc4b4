//! Normative probability maps, extreme-value abnormality scoring and the
//! evaluation metrics (AUC, R²).

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::linalg::DenseMatrix;
use crate::optim::{minimize_nelder_mead, NelderMeadSettings};
use crate::predictive::PredictiveDistribution;

/// Per-sample, per-task z-statistics; NaN where no prediction exists.
#[derive(Debug, Clone, PartialEq)]
pub struct NpmMatrix {
    pub values: DenseMatrix,
}

/// `NPM_ij = (y_ij − ŷ_ij) / √(σ²_ij + σ²_nj)`.
pub fn compute_npm(y_true: &DenseMatrix, pred: &PredictiveDistribution) -> Result<NpmMatrix> {
    check_dims("NPM shape", pred.mean.shape(), y_true.shape(), y_true.shape() == pred.mean.shape())?;
    check_dims(
        "NPM variance shape",
        pred.mean.shape(),
        pred.variance_diag.shape(),
        pred.variance_diag.shape() == pred.mean.shape(),
    )?;
    let (n, t) = y_true.shape();
    let mut values = DenseMatrix::zeros(n, t);
    for j in 0..t {
        let noise = pred.noise_variance.at(j);
        for i in 0..n {
            let total = pred.variance_diag[(i, j)] + noise;
            let resid = y_true[(i, j)] - pred.mean[(i, j)];
            values[(i, j)] = if total.is_nan() || resid.is_nan() {
                f64::NAN
            } else if total <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "zero total variance at sample {i}, task {j}"
                )));
            } else {
                resid / total.sqrt()
            };
        }
    }
    Ok(NpmMatrix { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RobustMean {
    /// Mean after dropping `fraction` of the selected values from each tail.
    Trimmed { fraction: f64 },
    Mean,
    Median,
}

impl Default for RobustMean {
    fn default() -> Self {
        RobustMean::Trimmed { fraction: 0.1 }
    }
}

impl RobustMean {
    /// `sorted` must be non-empty and sorted.
    fn apply(self, sorted: &[f64]) -> f64 {
        let k = sorted.len();
        match self {
            RobustMean::Trimmed { fraction } => {
                let g = ((fraction * k as f64) + 1e-9).floor() as usize;
                let kept = &sorted[g..k - g];
                kept.iter().sum::<f64>() / kept.len() as f64
            }
            RobustMean::Mean => sorted.iter().sum::<f64>() / k as f64,
            RobustMean::Median => {
                if k % 2 == 1 {
                    sorted[k / 2]
                } else {
                    0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
                }
            }
        }
    }
}

/// Default share of tasks used per sample.
pub const DEFAULT_TOP_FRACTION: f64 = 0.05;

/// Per-sample abnormality: robust mean of the `⌈fraction · T⌉` largest `|NPM|`
/// values. NaN cells are ignored.
pub fn abnormality_score(npm: &NpmMatrix, top_fraction: f64, robust: RobustMean) -> Result<Vec<f64>> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "top fraction must lie in (0, 1], got {top_fraction}"
        )));
    }
    if let RobustMean::Trimmed { fraction } = robust {
        if !(0.0..0.5).contains(&fraction) {
            return Err(Error::InvalidArgument(format!(
                "trim fraction must lie in [0, 0.5), got {fraction}"
            )));
        }
    }
    let t = npm.values.ncols();
    if top_fraction * (t as f64) < 1.0 - 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "top fraction {top_fraction} selects no task out of {t}"
        )));
    }
    npm.values
        .row_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut mags: Vec<f64> = row.iter().filter(|v| !v.is_nan()).map(|v| v.abs()).collect();
            if mags.is_empty() {
                return Err(Error::Degenerate(format!("sample {i} has no valid NPM entries")));
            }
            let k = ((top_fraction * mags.len() as f64) - 1e-9).ceil().max(1.0) as usize;
            mags.sort_by(|a, b| b.total_cmp(a));
            let mut top = mags[..k].to_vec();
            top.reverse();
            Ok(robust.apply(&top))
        })
        .collect()
}

/// Generalized extreme value distribution,
/// `F(x) = exp(−(1 + ξ (x − μ)/σ)^(−1/ξ))`, Gumbel at `ξ = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevdFit {
    pub shape: f64,
    pub location: f64,
    pub scale: f64,
    pub log_likelihood: f64,
    pub n_samples: usize,
}

const GUMBEL_EPS: f64 = 1e-12;

/// `ln(1 + ξ z) / ξ`, continuous through `ξ = 0`. `None` outside the support.
fn reduced(shape: f64, z: f64) -> Option<f64> {
    if shape.abs() < GUMBEL_EPS {
        return Some(z);
    }
    let arg = shape * z;
    if arg <= -1.0 {
        return None;
    }
    Some(arg.ln_1p() / shape)
}

pub fn gev_log_likelihood(shape: f64, location: f64, scale: f64, data: &[f64]) -> f64 {
    if !(scale > 0.0) || !shape.is_finite() || !location.is_finite() {
        return f64::NEG_INFINITY;
    }
    let mut ll = -(data.len() as f64) * scale.ln();
    for &x in data {
        let z = (x - location) / scale;
        let Some(r) = reduced(shape, z) else {
            return f64::NEG_INFINITY;
        };
        ll -= (1.0 + shape) * r + (-r).exp();
    }
    ll
}

pub fn gev_cdf(shape: f64, location: f64, scale: f64, x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let z = (x - location) / scale;
    match reduced(shape, z) {
        Some(r) => (-(-r).exp()).exp(),
        // Below the lower end point (ξ > 0) or above the upper one (ξ < 0).
        None => {
            if shape > 0.0 {
                0.0
            } else {
                1.0
            }
        }
    }
}

pub fn gev_pdf(shape: f64, location: f64, scale: f64, x: f64) -> f64 {
    let z = (x - location) / scale;
    match reduced(shape, z) {
        Some(r) => ((-(1.0 + shape) * r) - (-r).exp()).exp() / scale,
        None => 0.0,
    }
}

/// Maximum-likelihood GEV fit (Nelder–Mead on `(μ, ln σ, ξ)` over
/// standardized data, restarted from its own optimum until stable).
pub fn fit_gevd(scores: &[f64]) -> Result<GevdFit> {
    if scores.len() < 20 {
        return Err(Error::InvalidArgument(format!(
            "GEV fit needs at least 20 samples, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GEV fit input"));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return Err(Error::Degenerate("GEV fit input is constant".into()));
    }
    let z: Vec<f64> = scores.iter().map(|v| (v - mean) / sd).collect();

    let nll = |p: &[f64]| {
        if p[2] <= -1.0 || p[2] > 10.0 {
            return f64::INFINITY;
        }
        -gev_log_likelihood(p[2], p[0], p[1].exp(), &z)
    };
    let beta = 6.0_f64.sqrt() / std::f64::consts::PI;
    let mut x = vec![-0.577_215_664_901_532_9 * beta, beta.ln(), 0.0];
    // Shape starting points on either side of zero; keep the best.
    let mut best_val = f64::INFINITY;
    let settings = NelderMeadSettings::default();
    for start_shape in [0.0, 0.2, -0.2] {
        let mut p = x.clone();
        p[2] = start_shape;
        if !nll(&p).is_finite() {
            continue;
        }
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let m = minimize_nelder_mead(nll, &p, &settings)?;
            p = m.x;
            if (prev - m.value).abs() <= 1e-12 * m.value.abs().max(1.0) {
                prev = m.value;
                break;
            }
            prev = m.value;
        }
        if prev < best_val {
            best_val = prev;
            x = p;
        }
    }
    if !best_val.is_finite() {
        return Err(Error::Optimizer("GEV likelihood maximization failed".into()));
    }
    let location = mean + sd * x[0];
    let scale = sd * x[1].exp();
    let shape = x[2];
    let log_likelihood = gev_log_likelihood(shape, location, scale, scores);
    if !log_likelihood.is_finite() {
        return Err(Error::Optimizer("non-finite GEV log-likelihood at fit".into()));
    }
    Ok(GevdFit {
        shape,
        location,
        scale,
        log_likelihood,
        n_samples: scores.len(),
    })
}

/// GEV CDF at `score`: the probability that a sample is abnormal.
pub fn abnormality_probability(fit: &GevdFit, score: f64) -> f64 {
    gev_cdf(fit.shape, fit.location, fit.scale, score)
}

/// Area under the ROC curve via the Mann–Whitney statistic, ties counting ½.
pub fn auc(scores_normal: &[f64], scores_abnormal: &[f64]) -> Result<f64> {
    if scores_normal.is_empty() || scores_abnormal.is_empty() {
        return Err(Error::Empty("AUC score set"));
    }
    if scores_normal.iter().chain(scores_abnormal).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("AUC scores"));
    }
    let mut pooled: Vec<(f64, bool)> = scores_normal
        .iter()
        .map(|&s| (s, false))
        .chain(scores_abnormal.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum of (1-based, mid-) ranks of the abnormal group.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * pooled[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let n_a = scores_abnormal.len() as f64;
    let n_n = scores_normal.len() as f64;
    let u = rank_sum - n_a * (n_a + 1.0) / 2.0;
    Ok(u / (n_a * n_n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RSquared {
    /// NaN for zero-variance or unpredicted tasks.
    pub per_task: Vec<f64>,
    /// Mean over the finite entries of `per_task`.
    pub mean: f64,
    pub excluded: usize,
}

/// Coefficient of determination `1 − SSE/SST` per task.
pub fn r_squared(y_true: &DenseMatrix, y_pred: &DenseMatrix) -> Result<RSquared> {
    check_dims("R² shape", y_true.shape(), y_pred.shape(), y_true.shape() == y_pred.shape())?;
    if y_true.is_empty() {
        return Err(Error::Empty("R² input"));
    }
    let per_task: Vec<f64> = y_true
        .column_iter()
        .zip(y_pred.column_iter())
        .map(|(yt, yp)| {
            let mean = yt.mean();
            let sst: f64 = yt.iter().map(|v| (v - mean).powi(2)).sum();
            let sse: f64 = yt.iter().zip(yp.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            if sst > 0.0 && sse.is_finite() {
                1.0 - sse / sst
            } else {
                f64::NAN
            }
        })
        .collect();
    let valid: Vec<f64> = per_task.iter().copied().filter(|v| v.is_finite()).collect();
    let mean = if valid.is_empty() {
        f64::NAN
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    Ok(RSquared {
        excluded: per_task.len() - valid.len(),
        per_task,
        mean,
    })
}
