//! Covariance functions for both the sample covariance `R` and the task
//! covariance `C` (or `D`).
//!
//! Every positive quantity is stored as its logarithm, so optimization runs
//! unconstrained and gradients are taken with respect to the log values:
//! `∂K/∂(ln q) = q · ∂K/∂q`.
//!
//! Parameter layout follows term order:
//!
//! | term                 | raw parameters                      |
//! |----------------------|-------------------------------------|
//! | `Linear`             | `ln a`                              |
//! | `SquaredExponential` | `ln s` (amplitude), `ln ℓ` (length) |
//! | `DiagonalIsotropic`  | `ln d`                              |

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::linalg::{ensure_finite, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelTerm {
    /// `a · x xᵀ`
    Linear,
    /// `s · exp(−‖x − x′‖² / (2ℓ²))`
    SquaredExponential,
    /// `d · I`, only on the covariance of a point set with itself.
    DiagonalIsotropic,
}

impl KernelTerm {
    pub fn n_params(self) -> usize {
        match self {
            KernelTerm::Linear => 1,
            KernelTerm::SquaredExponential => 2,
            KernelTerm::DiagonalIsotropic => 1,
        }
    }
}

/// Ordered sum of kernel terms. Term order fixes the parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<KernelTerm>", into = "Vec<KernelTerm>")]
pub struct KernelSpec {
    terms: Vec<KernelTerm>,
}

impl TryFrom<Vec<KernelTerm>> for KernelSpec {
    type Error = Error;

    fn try_from(terms: Vec<KernelTerm>) -> Result<Self> {
        KernelSpec::new(terms)
    }
}

impl From<KernelSpec> for Vec<KernelTerm> {
    fn from(spec: KernelSpec) -> Self {
        spec.terms
    }
}

impl KernelSpec {
    pub fn new(terms: Vec<KernelTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument(
                "kernel spec needs at least one term".into(),
            ));
        }
        Ok(KernelSpec { terms })
    }

    /// Linear + squared exponential + diagonal isotropic.
    pub fn linear_se_diag() -> Self {
        KernelSpec {
            terms: vec![
                KernelTerm::Linear,
                KernelTerm::SquaredExponential,
                KernelTerm::DiagonalIsotropic,
            ],
        }
    }

    /// Linear + squared exponential, the per-task kernel of the single-task baseline.
    pub fn linear_se() -> Self {
        KernelSpec {
            terms: vec![KernelTerm::Linear, KernelTerm::SquaredExponential],
        }
    }

    pub fn terms(&self) -> &[KernelTerm] {
        &self.terms
    }

    pub fn n_params(&self) -> usize {
        self.terms.iter().map(|t| t.n_params()).sum()
    }

    pub fn default_params(&self) -> KernelParams {
        KernelParams {
            raw: vec![0.0; self.n_params()],
        }
    }

    fn check(&self, params: &KernelParams) -> Result<()> {
        check_dims(
            "kernel parameters",
            self.n_params(),
            params.raw.len(),
            params.raw.len() == self.n_params(),
        )?;
        if params.raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel parameters"));
        }
        if params.raw.iter().any(|v| !v.exp().is_finite()) {
            return Err(Error::NonFinite("exponentiated kernel parameter"));
        }
        Ok(())
    }

    /// Walks terms together with their constrained parameter values.
    fn for_each_term(&self, params: &KernelParams, mut f: impl FnMut(KernelTerm, usize, &[f64])) {
        let mut offset = 0;
        for &term in &self.terms {
            let n = term.n_params();
            let values: Vec<f64> = params.raw[offset..offset + n].iter().map(|v| v.exp()).collect();
            f(term, offset, &values);
            offset += n;
        }
    }
}

/// Unconstrained (log-space) kernel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KernelParams {
    pub raw: Vec<f64>,
}

impl KernelParams {
    pub fn new(raw: Vec<f64>) -> Self {
        KernelParams { raw }
    }

    /// Constrained values `exp(raw)`.
    pub fn values(&self) -> Vec<f64> {
        self.raw.iter().map(|v| v.exp()).collect()
    }
}

/// One-hot coordinates for `n` tasks: the `n × n` identity.
pub fn one_hot_features(n: usize) -> DenseMatrix {
    DenseMatrix::identity(n, n)
}

fn sq_dist(x1: &DenseMatrix, x2: &DenseMatrix) -> DenseMatrix {
    let n1: Vec<f64> = x1.row_iter().map(|r| r.norm_squared()).collect();
    let n2: Vec<f64> = x2.row_iter().map(|r| r.norm_squared()).collect();
    let mut d = x1 * x2.transpose();
    for j in 0..d.ncols() {
        for i in 0..d.nrows() {
            d[(i, j)] = (n1[i] + n2[j] - 2.0 * d[(i, j)]).max(0.0);
        }
    }
    d
}

fn same_points(x1: &DenseMatrix, x2: &DenseMatrix) -> bool {
    std::ptr::eq(x1, x2) || x1 == x2
}

/// Kernel matrix `K(x1, x2)`.
///
/// The diagonal-isotropic term contributes only when `x1` and `x2` are the
/// same point set; cross-covariances omit it.
pub fn eval_kernel(
    spec: &KernelSpec,
    params: &KernelParams,
    x1: &DenseMatrix,
    x2: &DenseMatrix,
) -> Result<DenseMatrix> {
    if same_points(x1, x2) {
        GramCache::new(x1).gram(spec, params)
    } else {
        cross_kernel(spec, params, x1, x2)
    }
}

/// Cross-covariance between distinct point sets (no diagonal term).
pub fn cross_kernel(
    spec: &KernelSpec,
    params: &KernelParams,
    x1: &DenseMatrix,
    x2: &DenseMatrix,
) -> Result<DenseMatrix> {
    spec.check(params)?;
    check_dims(
        "kernel feature dimension",
        x1.ncols(),
        x2.ncols(),
        x1.ncols() == x2.ncols(),
    )?;
    let inner = x1 * x2.transpose();
    let sqdist = spec
        .terms
        .contains(&KernelTerm::SquaredExponential)
        .then(|| sq_dist(x1, x2));
    let mut k = DenseMatrix::zeros(x1.nrows(), x2.nrows());
    spec.for_each_term(params, |term, _, v| match term {
        KernelTerm::Linear => k += &inner * v[0],
        KernelTerm::SquaredExponential => {
            let d = sqdist.as_ref().expect("distances computed for SE term");
            let inv = 0.5 / (v[1] * v[1]);
            k.zip_apply(d, |kij, dij| *kij += v[0] * (-dij * inv).exp());
        }
        KernelTerm::DiagonalIsotropic => {}
    });
    ensure_finite(&k, "cross kernel")?;
    Ok(k)
}

/// Diagonal of `K(x, x)` without forming the full matrix.
pub fn gram_diag(spec: &KernelSpec, params: &KernelParams, x: &DenseMatrix) -> Result<Vec<f64>> {
    spec.check(params)?;
    let sq: Vec<f64> = x.row_iter().map(|r| r.norm_squared()).collect();
    let mut out = vec![0.0; x.nrows()];
    spec.for_each_term(params, |term, _, v| {
        for (o, s) in out.iter_mut().zip(&sq) {
            *o += match term {
                KernelTerm::Linear => v[0] * s,
                KernelTerm::SquaredExponential => v[0],
                KernelTerm::DiagonalIsotropic => v[0],
            };
        }
    });
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel diagonal"));
    }
    Ok(out)
}

/// `∂K(x, x)/∂raw[param_index]`.
pub fn kernel_grad(
    spec: &KernelSpec,
    params: &KernelParams,
    x: &DenseMatrix,
    param_index: usize,
) -> Result<DenseMatrix> {
    if param_index >= spec.n_params() {
        return Err(Error::InvalidArgument(format!(
            "parameter index {param_index} out of range for {} parameters",
            spec.n_params()
        )));
    }
    let (_, mut grads) = GramCache::new(x).gram_with_grads(spec, params)?;
    Ok(grads.swap_remove(param_index))
}

/// Pairwise quantities of one point set, reused across parameter values.
#[derive(Debug, Clone)]
pub struct GramCache {
    inner: DenseMatrix,
    sqdist: DenseMatrix,
}

impl GramCache {
    pub fn new(x: &DenseMatrix) -> Self {
        GramCache {
            inner: x * x.transpose(),
            sqdist: sq_dist(x, x),
        }
    }

    pub fn n(&self) -> usize {
        self.inner.nrows()
    }

    pub fn gram(&self, spec: &KernelSpec, params: &KernelParams) -> Result<DenseMatrix> {
        spec.check(params)?;
        let n = self.n();
        let mut k = DenseMatrix::zeros(n, n);
        spec.for_each_term(params, |term, _, v| match term {
            KernelTerm::Linear => k += &self.inner * v[0],
            KernelTerm::SquaredExponential => {
                let inv = 0.5 / (v[1] * v[1]);
                k.zip_apply(&self.sqdist, |kij, dij| *kij += v[0] * (-dij * inv).exp());
            }
            KernelTerm::DiagonalIsotropic => {
                for i in 0..n {
                    k[(i, i)] += v[0];
                }
            }
        });
        ensure_finite(&k, "kernel matrix")?;
        Ok(k)
    }

    /// The kernel matrix together with its derivative for every raw parameter.
    pub fn gram_with_grads(
        &self,
        spec: &KernelSpec,
        params: &KernelParams,
    ) -> Result<(DenseMatrix, Vec<DenseMatrix>)> {
        spec.check(params)?;
        let n = self.n();
        let mut k = DenseMatrix::zeros(n, n);
        let mut grads = Vec::with_capacity(spec.n_params());
        spec.for_each_term(params, |term, _, v| match term {
            KernelTerm::Linear => {
                let g = &self.inner * v[0];
                k += &g;
                grads.push(g);
            }
            KernelTerm::SquaredExponential => {
                let inv_l2 = 1.0 / (v[1] * v[1]);
                let e = self.sqdist.map(|d| v[0] * (-0.5 * d * inv_l2).exp());
                let mut dl = e.clone();
                dl.zip_apply(&self.sqdist, |g, d| *g *= d * inv_l2);
                k += &e;
                grads.push(e);
                grads.push(dl);
            }
            KernelTerm::DiagonalIsotropic => {
                let g = DenseMatrix::identity(n, n) * v[0];
                k += &g;
                grads.push(g);
            }
        });
        ensure_finite(&k, "kernel matrix")?;
        Ok((k, grads))
    }
}
