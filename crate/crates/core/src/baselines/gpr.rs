//! Single-output GP regression with Cholesky factorization.

use faer::linalg::solvers::{DenseSolveCore, Llt, Solve};
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::kernels::{GramCache, KernelParams, KernelSpec};
use crate::linalg::DenseMatrix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cholesky factor of a symmetric positive definite matrix.
pub(crate) struct SpdFactor {
    llt: Llt<f64>,
}

impl SpdFactor {
    fn new(k: &DenseMatrix) -> Result<Self> {
        let n = k.nrows();
        let mat = faer::Mat::<f64>::from_fn(n, n, |i, j| k[(i, j)]);
        let llt = mat
            .llt(faer::Side::Lower)
            .map_err(|_| Error::Singular("single-task covariance".into()))?;
        Ok(SpdFactor { llt })
    }

    fn n(&self) -> usize {
        self.llt.L().nrows()
    }

    fn solve(&self, b: &DenseMatrix) -> DenseMatrix {
        let rhs = faer::Mat::<f64>::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)]);
        let x = self.llt.solve(rhs);
        DenseMatrix::from_fn(b.nrows(), b.ncols(), |i, j| x[(i, j)])
    }

    fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let x = self.solve(&DenseMatrix::from_column_slice(b.len(), 1, b.as_slice()));
        DVector::from_column_slice(x.as_slice())
    }

    fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..self.n()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    fn inverse(&self) -> DenseMatrix {
        let inv = self.llt.inverse();
        DenseMatrix::from_fn(self.n(), self.n(), |i, j| inv[(i, j)])
    }
}

/// Raw layout `[Θ_kernel, ln σ²]`.
pub(crate) fn factor(
    spec: &KernelSpec,
    cache: &GramCache,
    raw: &[f64],
    with_grads: bool,
) -> Result<(SpdFactor, Vec<DenseMatrix>, f64)> {
    let nk = spec.n_params();
    let params = KernelParams::new(raw[..nk].to_vec());
    let sigma2 = raw[nk].exp();
    if !sigma2.is_finite() || sigma2 <= 0.0 {
        return Err(Error::NonFinite("noise parameter"));
    }
    let (mut k, grads) = if with_grads {
        cache.gram_with_grads(spec, &params)?
    } else {
        (cache.gram(spec, &params)?, Vec::new())
    };
    for i in 0..k.nrows() {
        k[(i, i)] += sigma2;
    }
    Ok((SpdFactor::new(&k)?, grads, sigma2))
}

/// Log marginal likelihood and, optionally, its gradient w.r.t. `raw`.
pub(crate) fn lml_and_gradient(
    spec: &KernelSpec,
    cache: &GramCache,
    raw: &[f64],
    y: &DVector<f64>,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let (chol, grads, sigma2) = factor(spec, cache, raw, with_grad)?;
    let alpha = chol.solve_vec(y);
    let logdet = chol.log_det();
    let lml = -0.5 * y.dot(&alpha) - 0.5 * logdet - 0.5 * y.len() as f64 * LN_2PI;
    if !lml.is_finite() {
        return Err(Error::NonFinite("single-task log marginal likelihood"));
    }
    if !with_grad {
        return Ok((lml, None));
    }
    // ∂L/∂θ = ½ tr((ααᵀ − K⁻¹) ∂K/∂θ)
    let mut w = chol.inverse();
    w.neg_mut();
    w.ger(1.0, &alpha, &alpha, 1.0);
    let mut grad: Vec<f64> = grads.iter().map(|g| 0.5 * w.dot(g)).collect();
    grad.push(0.5 * sigma2 * w.trace());
    Ok((lml, Some(grad)))
}

/// Predictive mean and latent variance at `k_star` (`N* × N`) given the test diagonal.
pub(crate) fn predict(
    chol: &SpdFactor,
    y: &DVector<f64>,
    k_star: &DenseMatrix,
    k_star_diag: &[f64],
) -> (DVector<f64>, DVector<f64>) {
    let alpha = chol.solve_vec(y);
    let mean = k_star * alpha;
    let v = chol.solve(&k_star.transpose());
    let var = DVector::from_iterator(
        k_star.nrows(),
        k_star
            .row_iter()
            .zip(v.column_iter())
            .zip(k_star_diag)
            .map(|((k, c), d)| d - k.transpose().dot(&c)),
    );
    (mean, var)
}
