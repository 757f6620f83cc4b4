//! Reference implementation that materializes the full `NT × NT` covariance.
//!
//! It exists to check the eigendecomposition-based paths and refuses
//! problems larger than [`DENSE_GUARD`] observations.

use nalgebra::{Cholesky, DVector};

use crate::basis::OrthogonalBasis;
use crate::error::{check_dims, Error, Result};
use crate::kernels::{cross_kernel, eval_kernel};
use crate::linalg::DenseMatrix;
use crate::predictive::{NoiseVariance, PredictiveDistribution};
use crate::smtgpr::{ModelConfig, ModelParams};

pub const DENSE_GUARD: usize = 2000;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn guard(size: usize) -> Result<()> {
    if size > DENSE_GUARD {
        Err(Error::SizeGuard {
            size,
            limit: DENSE_GUARD,
        })
    } else {
        Ok(())
    }
}

fn joint_covariance(d: &DenseMatrix, r: &DenseMatrix, sigma2: f64) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let nt = d.nrows() * r.nrows();
    guard(nt)?;
    let k = d.kronecker(r) + DenseMatrix::identity(nt, nt) * sigma2;
    Cholesky::new(k).ok_or_else(|| Error::Singular("dense covariance is not positive definite".into()))
}

/// `ln N(vec(Y) | 0, D ⊗ R + σ² I)` by Cholesky of the full covariance.
pub fn dense_lml(d: &DenseMatrix, r: &DenseMatrix, sigma2: f64, y: &DenseMatrix) -> Result<f64> {
    check_dims("dense oracle shape", (r.nrows(), d.nrows()), y.shape(), y.shape() == (r.nrows(), d.nrows()))?;
    let chol = joint_covariance(d, r, sigma2)?;
    let v = DVector::from_column_slice(y.as_slice());
    let alpha = chol.solve(&v);
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|l| l.ln()).sum::<f64>();
    Ok(-0.5 * v.len() as f64 * LN_2PI - 0.5 * logdet - 0.5 * v.dot(&alpha))
}

/// Predictive mean (`N* × T`) and full latent covariance (`N*T × N*T`):
/// `vec(M*) = (D ⊗ R*) K⁻¹ vec(Y)`, `V* = D ⊗ R** − (D ⊗ R*) K⁻¹ (D ⊗ R*ᵀ)`.
pub fn dense_predict(
    d: &DenseMatrix,
    r: &DenseMatrix,
    sigma2: f64,
    y: &DenseMatrix,
    r_star: &DenseMatrix,
    r_star_star: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    guard(r_star.nrows() * d.nrows())?;
    let chol = joint_covariance(d, r, sigma2)?;
    let cross = d.kronecker(r_star);
    let v = DVector::from_column_slice(y.as_slice());
    let mean_vec = &cross * chol.solve(&v);
    let mean = DenseMatrix::from_column_slice(r_star.nrows(), d.nrows(), mean_vec.as_slice());
    let solved = chol.solve(&cross.transpose());
    let cov = d.kronecker(r_star_star) - &cross * solved;
    Ok((mean, cov))
}

/// Dense log-likelihood and prediction for the low-rank model at given
/// parameters. Returns the full latent covariance alongside the distribution.
pub fn dense_oracle_lml_and_predict(
    config: &ModelConfig,
    basis: &OrthogonalBasis,
    task_features: &DenseMatrix,
    params: &ModelParams,
    x: &DenseMatrix,
    y: &DenseMatrix,
    x_star: &DenseMatrix,
) -> Result<(f64, PredictiveDistribution, DenseMatrix)> {
    guard(y.len())?;
    let c = eval_kernel(&config.task_kernel, &params.theta_c, task_features, task_features)?;
    let b = basis.matrix();
    let d = b * c * b.transpose();
    let r = eval_kernel(&config.sample_kernel, &params.theta_r, x, x)?;
    let r_star = cross_kernel(&config.sample_kernel, &params.theta_r, x_star, x)?;
    let r_ss = eval_kernel(&config.sample_kernel, &params.theta_r, x_star, x_star)?;
    let sigma2 = params.sigma2();
    let lml = dense_lml(&d, &r, sigma2, y)?;
    let (mean, cov) = dense_predict(&d, &r, sigma2, y, &r_star, &r_ss)?;
    let n_star = x_star.nrows();
    let variance_diag = DenseMatrix::from_fn(n_star, y.ncols(), |a, t| cov[(t * n_star + a, t * n_star + a)]);
    Ok((
        lml,
        PredictiveDistribution {
            mean,
            variance_diag,
            noise_variance: NoiseVariance::Shared(sigma2),
        },
        cov,
    ))
}
