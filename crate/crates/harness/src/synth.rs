//! Synthetic normative-modeling data: responses drawn from a Kronecker GP
//! with a spatially smooth task covariance, plus localized shifts on the
//! abnormal test samples.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use smtgpr::linalg::sym_eig;
use smtgpr::DenseMatrix;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_test_normal: usize,
    pub n_test_abnormal: usize,
    pub n_tasks: usize,
    pub n_features: usize,
    /// Correlation length of the task covariance, in grid steps.
    pub spatial_lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    /// Share of the sample covariance carried by the linear kernel; the
    /// remainder is a squared-exponential kernel with lengthscale `√F`.
    pub linear_share: f64,
    /// Peak height of the abnormal bump.
    pub shift_magnitude: f64,
    /// Patch width as a fraction of the task grid.
    pub patch_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_train: 150,
            n_test_normal: 100,
            n_test_abnormal: 100,
            n_tasks: 400,
            n_features: 20,
            spatial_lengthscale: 10.0,
            signal_variance: 1.0,
            noise_variance: 0.25,
            linear_share: 0.5,
            shift_magnitude: 2.0,
            patch_fraction: 0.1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(format!("synthetic spec: {m}")));
        if self.n_train == 0 || self.n_tasks == 0 || self.n_features == 0 {
            return bad("n_train, n_tasks and n_features must be positive");
        }
        if !(self.spatial_lengthscale > 0.0) {
            return bad("spatial_lengthscale must be positive");
        }
        if !(self.signal_variance >= 0.0) || !(self.noise_variance >= 0.0) {
            return bad("variances must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.linear_share) {
            return bad("linear_share must lie in [0, 1]");
        }
        if !(self.patch_fraction > 0.0 && self.patch_fraction <= 1.0) {
            return bad("patch_fraction must lie in (0, 1]");
        }
        if !self.shift_magnitude.is_finite() {
            return bad("shift_magnitude must be finite");
        }
        Ok(())
    }

    pub fn n_test(&self) -> usize {
        self.n_test_normal + self.n_test_abnormal
    }

    pub fn patch_width(&self) -> usize {
        ((self.patch_fraction * self.n_tasks as f64).round() as usize).clamp(1, self.n_tasks)
    }

    /// `exp(−(i − j)² / (2ℓ²))` on the task grid.
    pub fn task_covariance(&self) -> DenseMatrix {
        let l2 = self.spatial_lengthscale * self.spatial_lengthscale;
        DenseMatrix::from_fn(self.n_tasks, self.n_tasks, |i, j| {
            let d = i as f64 - j as f64;
            (-d * d / (2.0 * l2)).exp()
        })
    }

    pub fn sample_covariance(&self, x: &DenseMatrix) -> DenseMatrix {
        let f = self.n_features as f64;
        let lin = x * x.transpose() / f;
        let n = x.nrows();
        let mut r = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let d2 = (x.row(i) - x.row(j)).norm_squared();
                let v = self.linear_share * lin[(i, j)] + (1.0 - self.linear_share) * (-d2 / (2.0 * f)).exp();
                r[(i, j)] = v;
                r[(j, i)] = v;
            }
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub x_train: DenseMatrix,
    pub y_train: DenseMatrix,
    pub x_test: DenseMatrix,
    pub y_test: DenseMatrix,
    /// `true` for abnormal test rows (placed after the normal rows).
    pub labels: Vec<bool>,
}

/// Symmetric square root factor `U √S` (negative eigenvalues dropped).
fn psd_factor(a: &DenseMatrix) -> Result<DenseMatrix> {
    let e = sym_eig(a)?;
    let mut l = e.vectors;
    for (mut col, s) in l.column_iter_mut().zip(e.values.iter()) {
        col *= s.max(0.0).sqrt();
    }
    Ok(l)
}

fn standard_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Hann window of length `w`, peaking at 1.
fn bump(w: usize) -> Vec<f64> {
    (0..w)
        .map(|k| {
            let phase = std::f64::consts::PI * (k as f64 + 1.0) / (w as f64 + 1.0);
            phase.sin().powi(2)
        })
        .collect()
}

/// Draws a train/test split. Every random number is drawn before the shift
/// magnitude is applied, so two specs differing only in `shift_magnitude`
/// yield identical data except on the abnormal rows.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tr = spec.n_train;
    let n = n_tr + spec.n_test();
    let t = spec.n_tasks;

    let x = standard_normal(&mut rng, n, spec.n_features);
    let z = standard_normal(&mut rng, n, t);
    let noise = standard_normal(&mut rng, n, t);
    let width = spec.patch_width();
    let patches: Vec<(usize, f64)> = (0..spec.n_test_abnormal)
        .map(|_| {
            let start = rng.random_range(0..=t - width);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            (start, sign)
        })
        .collect();

    let l_r = psd_factor(&spec.sample_covariance(&x))?;
    let l_d = psd_factor(&spec.task_covariance())?;
    let mut y = (&l_r * z * l_d.transpose()) * spec.signal_variance.sqrt() + noise * spec.noise_variance.sqrt();

    let shape = bump(width);
    let first_abnormal = n_tr + spec.n_test_normal;
    for (k, &(start, sign)) in patches.iter().enumerate() {
        let row = first_abnormal + k;
        for (o, b) in shape.iter().enumerate() {
            y[(row, start + o)] += sign * spec.shift_magnitude * b;
        }
    }

    let mut labels = vec![false; spec.n_test_normal];
    labels.extend(std::iter::repeat_n(true, spec.n_test_abnormal));
    Ok(SyntheticData {
        x_train: x.rows(0, n_tr).into_owned(),
        y_train: y.rows(0, n_tr).into_owned(),
        x_test: x.rows(n_tr, spec.n_test()).into_owned(),
        y_test: y.rows(n_tr, spec.n_test()).into_owned(),
        labels,
    })
}
