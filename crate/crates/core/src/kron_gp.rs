//! Shared engine for Gaussian processes with covariance
//! `L D̃ Lᵀ ⊗ R + σ² I`, where `L` is either an orthonormal basis `B`
//! (`T × P`, low-rank model) or the identity (full Kronecker model).
//!
//! With `C = U_C S_C U_Cᵀ` and `R = U_R S_R U_Rᵀ`, the covariance is diagonal
//! in the basis `B U_C ⊗ U_R` with eigenvalues `S_C ⊗ S_R + σ²` (the matrix
//! `K̃`), plus `(T − P) · N` eigenvalues equal to `σ²` on the orthogonal
//! complement of `B`. Everything here works on `N × P` arrays laid out so that
//! column-major `vec` matches the Kronecker index `task · N + sample`.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{check_dims, Error, Result};
use crate::kernels::{GramCache, KernelParams, KernelSpec};
use crate::linalg::{kron_product, scale_columns, scale_rows, sym_eig, DenseMatrix, EigenDecomposition};
use crate::optim::{minimize_lbfgs, LbfgsSettings, Minimum};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Data-side quantities that stay fixed while parameters change.
#[derive(Debug, Clone)]
pub(crate) struct ProjectedData {
    /// `Y B` (or `Y` for the identity lift), `N × P`.
    pub z: DenseMatrix,
    /// `‖Y − Y B Bᵀ‖²_F`, the data energy outside the span of `B`.
    pub null_energy: f64,
    /// `(T − P) · N`, the number of pure-noise eigendirections.
    pub null_count: usize,
    /// `N · T`.
    pub n_obs: usize,
}

impl ProjectedData {
    pub fn full(y: &DenseMatrix) -> Self {
        ProjectedData {
            z: y.clone(),
            null_energy: 0.0,
            null_count: 0,
            n_obs: y.len(),
        }
    }

    pub fn projected(y: &DenseMatrix, b: &DenseMatrix) -> Self {
        let z = y * b;
        let residual = y - &z * b.transpose();
        ProjectedData {
            null_energy: residual.norm_squared(),
            null_count: (b.nrows() - b.ncols()) * y.nrows(),
            n_obs: y.len(),
            z,
        }
    }
}

/// Eigen-diagonalized state at one parameter setting.
#[derive(Debug, Clone)]
pub(crate) struct KronState {
    pub eig_task: EigenDecomposition,
    pub eig_sample: EigenDecomposition,
    /// Clamped (non-negative) eigenvalues.
    pub s_task: DVector<f64>,
    pub s_sample: DVector<f64>,
    pub sigma2: f64,
    /// `K̃⁻¹` arranged `N × P`.
    pub kinv: DenseMatrix,
    /// `U_Rᵀ Z U_C`, `N × P`.
    pub rotated: DenseMatrix,
    /// `Ỹ = K̃⁻¹ ⊙ U_Rᵀ Z U_C`, `N × P`.
    pub y_tilde: DenseMatrix,
    /// Number of `K̃` entries floored before inversion.
    pub floored: usize,
}

impl KronState {
    pub fn new(
        task_cov: &DenseMatrix,
        sample_cov: &DenseMatrix,
        sigma2: f64,
        data: &ProjectedData,
    ) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive and finite, got {sigma2}"
            )));
        }
        let eig_task = sym_eig(task_cov)?;
        let eig_sample = sym_eig(sample_cov)?;
        let s_task = eig_task.clamped_values();
        let s_sample = eig_sample.clamped_values();
        let (kinv_vec, floored) =
            crate::linalg::kron_shift_inverse_diag_floored(&s_task, &s_sample, sigma2)?;
        let n = s_sample.len();
        let p = s_task.len();
        let kinv = DenseMatrix::from_column_slice(n, p, kinv_vec.as_slice());
        let rotated = eig_sample.vectors.tr_mul(&data.z) * &eig_task.vectors;
        let y_tilde = kinv.component_mul(&rotated);
        Ok(KronState {
            eig_task,
            eig_sample,
            s_task,
            s_sample,
            sigma2,
            kinv,
            rotated,
            y_tilde,
            floored,
        })
    }

    /// Log marginal likelihood, including the pure-noise directions.
    pub fn lml(&self, data: &ProjectedData) -> f64 {
        let logdet_k: f64 = self.kinv.iter().map(|k| -k.ln()).sum::<f64>()
            + data.null_count as f64 * self.sigma2.ln();
        let quad = self.rotated.dot(&self.y_tilde) + data.null_energy / self.sigma2;
        -0.5 * data.n_obs as f64 * LN_2PI - 0.5 * logdet_k - 0.5 * quad
    }

    /// `W_C` such that `∂L/∂θ_C = Σ W_C ⊙ ∂C/∂θ_C`.
    ///
    /// This is `U_C M U_Cᵀ` with
    /// `M = ½ Ỹᵀ S_R Ỹ − ½ diag(K̃⁻¹ᵀ s_R)`, i.e. the determinant term
    /// `−½ diag(K̃⁻¹)ᵀ[diag(U_Cᵀ ∂C U_C) ⊗ s_R]` and the data term
    /// `½ vec(Ỹ)ᵀ vec(S_R Ỹ U_Cᵀ ∂C U_C)` folded into one trace.
    pub fn task_weight(&self) -> DenseMatrix {
        let w = self.kinv.tr_mul(&self.s_sample);
        let sy = scale_rows(&self.y_tilde, self.s_sample.as_slice());
        let mut m = self.y_tilde.tr_mul(&sy) * 0.5;
        for (i, wi) in w.iter().enumerate() {
            m[(i, i)] -= 0.5 * wi;
        }
        let u = &self.eig_task.vectors;
        u * m * u.transpose()
    }

    /// `W_R` such that `∂L/∂θ_R = Σ W_R ⊙ ∂R/∂θ_R`.
    pub fn sample_weight(&self) -> DenseMatrix {
        let v = &self.kinv * &self.s_task;
        let ys = scale_columns(&self.y_tilde, self.s_task.as_slice());
        let mut m = &ys * self.y_tilde.transpose() * 0.5;
        for (j, vj) in v.iter().enumerate() {
            m[(j, j)] -= 0.5 * vj;
        }
        let u = &self.eig_sample.vectors;
        u * m * u.transpose()
    }

    /// `∂L/∂(ln σ²)`.
    pub fn log_noise_gradient(&self, data: &ProjectedData) -> f64 {
        let s2 = self.sigma2;
        let trace = self.kinv.sum() + data.null_count as f64 / s2;
        let energy = self.y_tilde.norm_squared() + data.null_energy / (s2 * s2);
        s2 * (-0.5 * trace + 0.5 * energy)
    }

    /// `F = L C U_C`, `T × P` (`L` the lift, `None` for identity).
    fn task_factor(&self, lift: Option<&DenseMatrix>, task_cov: &DenseMatrix) -> DenseMatrix {
        let cu = task_cov * &self.eig_task.vectors;
        match lift {
            Some(b) => b * cu,
            None => cu,
        }
    }

    /// `diag(L C Lᵀ)`.
    fn task_prior_diag(lift: Option<&DenseMatrix>, task_cov: &DenseMatrix) -> Vec<f64> {
        match lift {
            Some(b) => {
                let bc = b * task_cov;
                bc.component_mul(b).row_iter().map(|r| r.sum()).collect()
            }
            None => task_cov.diagonal().iter().copied().collect(),
        }
    }

    /// Predictive mean `R* U_R Ỹ U_Cᵀ C Lᵀ` and the latent variance diagonal.
    ///
    /// The variance is assembled per test sample in contiguous blocks of
    /// `batch` tasks; each block writes a disjoint slice of the output, so the
    /// result does not depend on `batch` or on scheduling.
    pub fn predict(
        &self,
        lift: Option<&DenseMatrix>,
        task_cov: &DenseMatrix,
        r_star: &DenseMatrix,
        r_star_diag: &[f64],
        batch: usize,
    ) -> Result<(DenseMatrix, DenseMatrix)> {
        let n = self.s_sample.len();
        check_dims("cross-covariance columns", n, r_star.ncols(), r_star.ncols() == n)?;
        if batch == 0 {
            return Err(Error::InvalidArgument("variance batch size must be >= 1".into()));
        }
        let f = self.task_factor(lift, task_cov);
        let g = r_star * &self.eig_sample.vectors;
        let mean = &g * &self.y_tilde * f.transpose();

        let d_diag = Self::task_prior_diag(lift, task_cov);
        let f2 = f.component_mul(&f);
        // H[a, i] = Σ_j G[a, j]² K̃⁻¹[j, i]
        let h = g.component_mul(&g) * &self.kinv;
        let t = f2.nrows();
        let p = f2.ncols();
        let n_star = r_star.nrows();

        let rows: Vec<Vec<f64>> = (0..n_star)
            .into_par_iter()
            .map(|a| {
                let mut row = vec![0.0; t];
                let h_row: Vec<f64> = (0..p).map(|i| h[(a, i)]).collect();
                for start in (0..t).step_by(batch) {
                    let end = (start + batch).min(t);
                    for (tt, out) in (start..end).zip(row[start..end].iter_mut()) {
                        let mut reduction = 0.0;
                        for (i, hi) in h_row.iter().enumerate() {
                            reduction += hi * f2[(tt, i)];
                        }
                        *out = r_star_diag[a] * d_diag[tt] - reduction;
                    }
                }
                row
            })
            .collect();
        let var = DenseMatrix::from_fn(n_star, t, |a, tt| rows[a][tt]);
        Ok((mean, var))
    }

    /// Full latent predictive covariance `(L C Lᵀ ⊗ R**) − (F ⊗ R* U_R) K̃⁻¹ (F ⊗ R* U_R)ᵀ`.
    /// Intended for small problems (checked against the dense formula).
    pub fn predictive_covariance(
        &self,
        lift: Option<&DenseMatrix>,
        task_cov: &DenseMatrix,
        r_star: &DenseMatrix,
        r_star_star: &DenseMatrix,
    ) -> Result<DenseMatrix> {
        let f = self.task_factor(lift, task_cov);
        let g = r_star * &self.eig_sample.vectors;
        let d_tilde = match lift {
            Some(b) => b * task_cov * b.transpose(),
            None => task_cov.clone(),
        };
        let fg = kron_product(&f, &g)?;
        let scaled = scale_columns(&fg, self.kinv.as_slice());
        Ok(kron_product(&d_tilde, r_star_star)? - scaled * fg.transpose())
    }
}

/// Parameter layout `[Θ_task, Θ_sample, ln σ²]`.
#[derive(Debug, Clone)]
pub(crate) struct KronObjective {
    pub task_spec: KernelSpec,
    pub task_cache: GramCache,
    pub sample_spec: KernelSpec,
    pub sample_cache: GramCache,
    pub data: ProjectedData,
}

pub(crate) struct Evaluation {
    pub lml: f64,
    pub gradient: Option<Vec<f64>>,
    pub state: KronState,
    pub task_cov: DenseMatrix,
}

impl KronObjective {
    pub fn n_params(&self) -> usize {
        self.task_spec.n_params() + self.sample_spec.n_params() + 1
    }

    pub fn split<'a>(&self, raw: &'a [f64]) -> (&'a [f64], &'a [f64], f64) {
        let nc = self.task_spec.n_params();
        let nr = self.sample_spec.n_params();
        (&raw[..nc], &raw[nc..nc + nr], raw[nc + nr])
    }

    pub fn evaluate(&self, raw: &[f64], with_gradient: bool) -> Result<Evaluation> {
        check_dims("parameter vector", self.n_params(), raw.len(), raw.len() == self.n_params())?;
        let (tc, tr, ls) = self.split(raw);
        let tc = KernelParams::new(tc.to_vec());
        let tr = KernelParams::new(tr.to_vec());
        let sigma2 = ls.exp();
        if !ls.is_finite() || !sigma2.is_finite() {
            return Err(Error::NonFinite("noise parameter"));
        }

        let (task_cov, task_grads, sample_cov, sample_grads) = if with_gradient {
            let (c, gc) = self.task_cache.gram_with_grads(&self.task_spec, &tc)?;
            let (r, gr) = self.sample_cache.gram_with_grads(&self.sample_spec, &tr)?;
            (c, gc, r, gr)
        } else {
            let c = self.task_cache.gram(&self.task_spec, &tc)?;
            let r = self.sample_cache.gram(&self.sample_spec, &tr)?;
            (c, Vec::new(), r, Vec::new())
        };

        let state = KronState::new(&task_cov, &sample_cov, sigma2, &self.data)?;
        let lml = state.lml(&self.data);
        if !lml.is_finite() {
            return Err(Error::NonFinite("log marginal likelihood"));
        }

        let gradient = with_gradient.then(|| {
            let wc = state.task_weight();
            let wr = state.sample_weight();
            let mut grad = Vec::with_capacity(self.n_params());
            grad.extend(task_grads.iter().map(|dc| wc.dot(dc)));
            grad.extend(sample_grads.iter().map(|dr| wr.dot(dr)));
            grad.push(state.log_noise_gradient(&self.data));
            grad
        });
        Ok(Evaluation {
            lml,
            gradient,
            state,
            task_cov,
        })
    }

    /// Maximizes the log marginal likelihood from `init`.
    pub fn maximize(&self, init: &[f64], settings: &LbfgsSettings) -> Result<Minimum> {
        let objective = |raw: &[f64]| -> Result<(f64, Vec<f64>)> {
            let e = self.evaluate(raw, true)?;
            let g = e.gradient.expect("gradient requested");
            Ok((-e.lml, g.into_iter().map(|v| -v).collect()))
        };
        let min = minimize_lbfgs(objective, init, settings)?;
        if !min.value.is_finite() {
            return Err(Error::Optimizer("non-finite objective at optimum".into()));
        }
        Ok(min)
    }
}
