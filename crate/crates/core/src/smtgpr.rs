//! Scalable multi-task GP regression: `vec(Y) ~ N(0, B C Bᵀ ⊗ R + σ² I)` with
//! a PCA basis `B`, a small task covariance `C` (`P × P`) and a sample
//! covariance `R` (`N × N`).

use serde::{Deserialize, Serialize};

use crate::basis::{fit_basis, OrthogonalBasis};
use crate::error::{check_dims, Error, Result};
use crate::kernels::{cross_kernel, gram_diag, one_hot_features, GramCache, KernelParams, KernelSpec};
use crate::kron_gp::{KronObjective, KronState, ProjectedData};
use crate::linalg::{ensure_finite, DenseMatrix, EigenDecomposition};
use crate::optim::{LbfgsSettings, Termination};
use crate::predictive::{clamp_variance, NoiseVariance, PredictiveDistribution};

pub const DEFAULT_VARIANCE_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub sample_kernel: KernelSpec,
    pub task_kernel: KernelSpec,
    /// Number of basis components `P`.
    pub p: usize,
    #[serde(default)]
    pub optimizer: LbfgsSettings,
    /// Starting point; all-zero raw parameters when absent.
    #[serde(default)]
    pub init: Option<ModelParams>,
    #[serde(default = "default_batch")]
    pub variance_batch: usize,
}

fn default_batch() -> usize {
    DEFAULT_VARIANCE_BATCH
}

impl ModelConfig {
    /// Linear + squared-exponential + diagonal kernels for both covariances.
    pub fn new(p: usize) -> Self {
        ModelConfig {
            sample_kernel: KernelSpec::linear_se_diag(),
            task_kernel: KernelSpec::linear_se_diag(),
            p,
            optimizer: LbfgsSettings::default(),
            init: None,
            variance_batch: DEFAULT_VARIANCE_BATCH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidArgument("p must be >= 1".into()));
        }
        if self.variance_batch == 0 {
            return Err(Error::InvalidArgument("variance batch size must be >= 1".into()));
        }
        self.optimizer.validate()?;
        if let Some(init) = &self.init {
            init.check_layout(&self.task_kernel, &self.sample_kernel)?;
        }
        Ok(())
    }

    /// Optimized parameters (task kernel, sample kernel, noise).
    pub fn n_optimized_params(&self) -> usize {
        self.task_kernel.n_params() + self.sample_kernel.n_params() + 1
    }

    /// Optimized parameters plus the basis size hyperparameter.
    pub fn parameter_count(&self) -> usize {
        self.n_optimized_params() + 1
    }

    pub fn initial_params(&self) -> ModelParams {
        self.init.clone().unwrap_or_else(|| ModelParams {
            theta_c: self.task_kernel.default_params(),
            theta_r: self.sample_kernel.default_params(),
            log_sigma2: 0.0,
        })
    }
}

/// Raw (log-space) parameters of a Kronecker model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Task covariance parameters (`Θ_C`, or `Θ_D` for the full model).
    pub theta_c: KernelParams,
    /// Sample covariance parameters `Θ_R`.
    pub theta_r: KernelParams,
    /// `ln σ²`.
    pub log_sigma2: f64,
}

impl ModelParams {
    pub fn sigma2(&self) -> f64 {
        self.log_sigma2.exp()
    }

    /// Flattened as `[Θ_C, Θ_R, ln σ²]`.
    pub fn to_raw(&self) -> Vec<f64> {
        let mut raw = self.theta_c.raw.clone();
        raw.extend_from_slice(&self.theta_r.raw);
        raw.push(self.log_sigma2);
        raw
    }

    pub fn from_raw(raw: &[f64], task: &KernelSpec, sample: &KernelSpec) -> Result<Self> {
        let nc = task.n_params();
        let nr = sample.n_params();
        check_dims("parameter vector", nc + nr + 1, raw.len(), raw.len() == nc + nr + 1)?;
        Ok(ModelParams {
            theta_c: KernelParams::new(raw[..nc].to_vec()),
            theta_r: KernelParams::new(raw[nc..nc + nr].to_vec()),
            log_sigma2: raw[nc + nr],
        })
    }

    pub(crate) fn check_layout(&self, task: &KernelSpec, sample: &KernelSpec) -> Result<()> {
        check_dims(
            "task kernel parameters",
            task.n_params(),
            self.theta_c.raw.len(),
            self.theta_c.raw.len() == task.n_params(),
        )?;
        check_dims(
            "sample kernel parameters",
            sample.n_params(),
            self.theta_r.raw.len(),
            self.theta_r.raw.len() == sample.n_params(),
        )
    }
}

/// How the fit ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub initial_lml: f64,
    pub final_lml: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Entries of `K̃` floored before inversion at the optimum.
    pub floored_eigenvalues: usize,
}

fn check_training(x: &DenseMatrix, y: &DenseMatrix) -> Result<()> {
    check_dims("training rows", x.nrows(), y.nrows(), x.nrows() == y.nrows())?;
    if x.nrows() == 0 || x.ncols() == 0 || y.ncols() == 0 {
        return Err(Error::Empty("training data"));
    }
    ensure_finite(x, "training inputs")?;
    ensure_finite(y, "training responses")
}

fn objective(
    config: &ModelConfig,
    basis: &OrthogonalBasis,
    task_features: &DenseMatrix,
    x: &DenseMatrix,
    y: &DenseMatrix,
) -> Result<KronObjective> {
    check_training(x, y)?;
    check_dims("response task count", basis.n_tasks(), y.ncols(), y.ncols() == basis.n_tasks())?;
    check_dims(
        "task feature rows",
        basis.n_components(),
        task_features.nrows(),
        task_features.nrows() == basis.n_components(),
    )?;
    Ok(KronObjective {
        task_spec: config.task_kernel.clone(),
        task_cache: GramCache::new(task_features),
        sample_spec: config.sample_kernel.clone(),
        sample_cache: GramCache::new(x),
        data: ProjectedData::projected(y, basis.matrix()),
    })
}

/// Log marginal likelihood `L` of `vec(Y)` under `N(0, B C Bᵀ ⊗ R + σ² I)`,
/// evaluated through the eigendecompositions of `C` and `R` only. The
/// optimizer minimizes `−L`.
pub fn log_marginal_likelihood(
    config: &ModelConfig,
    basis: &OrthogonalBasis,
    params: &ModelParams,
    x: &DenseMatrix,
    y: &DenseMatrix,
) -> Result<f64> {
    let features = one_hot_features(basis.n_components());
    let obj = objective(config, basis, &features, x, y)?;
    Ok(obj.evaluate(&params.to_raw(), false)?.lml)
}

/// Gradient of `L` with respect to `[Θ_C, Θ_R, ln σ²]`.
pub fn lml_gradient(
    config: &ModelConfig,
    basis: &OrthogonalBasis,
    params: &ModelParams,
    x: &DenseMatrix,
    y: &DenseMatrix,
) -> Result<Vec<f64>> {
    let features = one_hot_features(basis.n_components());
    let obj = objective(config, basis, &features, x, y)?;
    Ok(obj
        .evaluate(&params.to_raw(), true)?
        .gradient
        .expect("gradient requested"))
}

/// A fitted model with the cached factorizations needed for prediction.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    config: ModelConfig,
    basis: OrthogonalBasis,
    task_features: DenseMatrix,
    params: ModelParams,
    train_x: DenseMatrix,
    train_y: DenseMatrix,
    task_cov: DenseMatrix,
    state: KronState,
    report: FitReport,
}

/// Fits a PCA basis with `config.p` components to `y` and maximizes the
/// marginal likelihood. Task covariance inputs are one-hot coordinates.
pub fn fit(config: &ModelConfig, x: &DenseMatrix, y: &DenseMatrix) -> Result<TrainedModel> {
    config.validate()?;
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument("need at least 2 training samples".into()));
    }
    check_training(x, y)?;
    let basis = fit_basis(y, config.p)?;
    let features = one_hot_features(config.p);
    fit_with_basis(config, basis, features, x, y)
}

/// Maximizes the marginal likelihood for a given basis and task features.
pub fn fit_with_basis(
    config: &ModelConfig,
    basis: OrthogonalBasis,
    task_features: DenseMatrix,
    x: &DenseMatrix,
    y: &DenseMatrix,
) -> Result<TrainedModel> {
    config.validate()?;
    check_dims("basis size", config.p, basis.n_components(), basis.n_components() == config.p)?;
    let obj = objective(config, &basis, &task_features, x, y)?;
    let init = config.initial_params().to_raw();
    let min = obj.maximize(&init, &config.optimizer)?;
    let params = ModelParams::from_raw(&min.x, &config.task_kernel, &config.sample_kernel)?;
    let eval = obj.evaluate(&min.x, false)?;
    let report = FitReport {
        initial_lml: -min.initial_value,
        final_lml: eval.lml,
        iterations: min.iterations,
        evaluations: min.evaluations,
        termination: min.termination,
        floored_eigenvalues: eval.state.floored,
    };
    Ok(TrainedModel {
        config: config.clone(),
        basis,
        task_features,
        params,
        train_x: x.clone(),
        train_y: y.clone(),
        task_cov: eval.task_cov,
        state: eval.state,
        report,
    })
}

impl TrainedModel {
    /// Rebuilds the cached state at given parameters without optimizing.
    pub fn from_params(
        config: ModelConfig,
        basis: OrthogonalBasis,
        task_features: DenseMatrix,
        params: ModelParams,
        x: DenseMatrix,
        y: DenseMatrix,
    ) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config.task_kernel, &config.sample_kernel)?;
        let obj = objective(&config, &basis, &task_features, &x, &y)?;
        let eval = obj.evaluate(&params.to_raw(), false)?;
        let report = FitReport {
            initial_lml: eval.lml,
            final_lml: eval.lml,
            iterations: 0,
            evaluations: 1,
            termination: Termination::MaxIterations,
            floored_eigenvalues: eval.state.floored,
        };
        Ok(TrainedModel {
            config,
            basis,
            task_features,
            params,
            train_x: x,
            train_y: y,
            task_cov: eval.task_cov,
            state: eval.state,
            report,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn basis(&self) -> &OrthogonalBasis {
        &self.basis
    }

    pub fn task_features(&self) -> &DenseMatrix {
        &self.task_features
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn sigma2(&self) -> f64 {
        self.state.sigma2
    }

    pub fn train_x(&self) -> &DenseMatrix {
        &self.train_x
    }

    pub fn train_y(&self) -> &DenseMatrix {
        &self.train_y
    }

    pub fn report(&self) -> &FitReport {
        &self.report
    }

    pub fn final_lml(&self) -> f64 {
        self.report.final_lml
    }

    pub fn task_covariance(&self) -> &DenseMatrix {
        &self.task_cov
    }

    pub fn eig_c(&self) -> &EigenDecomposition {
        &self.state.eig_task
    }

    pub fn eig_r(&self) -> &EigenDecomposition {
        &self.state.eig_sample
    }

    /// `diag(K̃⁻¹)` in Kronecker order (`task · N + sample`).
    pub fn k_tilde_inv_diag(&self) -> &[f64] {
        self.state.kinv.as_slice()
    }

    /// `Ỹ`, `N × P`.
    pub fn y_tilde(&self) -> &DenseMatrix {
        &self.state.y_tilde
    }

    fn sample_cross(&self, x_star: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
        check_dims(
            "test feature count",
            self.train_x.ncols(),
            x_star.ncols(),
            x_star.ncols() == self.train_x.ncols(),
        )?;
        ensure_finite(x_star, "test inputs")?;
        let theta_r = &self.params.theta_r;
        let r_star = cross_kernel(&self.config.sample_kernel, theta_r, x_star, &self.train_x)?;
        let r_diag = gram_diag(&self.config.sample_kernel, theta_r, x_star)?;
        Ok((r_star, r_diag))
    }

    /// Predictive mean `R* U_R Ỹ U_Cᵀ C Bᵀ` and the diagonal of the latent
    /// predictive covariance, computed in task blocks of `config.variance_batch`.
    pub fn predict(&self, x_star: &DenseMatrix) -> Result<PredictiveDistribution> {
        let (r_star, r_diag) = self.sample_cross(x_star)?;
        let (mean, mut var) = self.state.predict(
            Some(self.basis.matrix()),
            &self.task_cov,
            &r_star,
            &r_diag,
            self.config.variance_batch,
        )?;
        ensure_finite(&mean, "predictive mean")?;
        let prior = r_diag.iter().cloned().fold(0.0, f64::max) * self.task_cov.amax();
        clamp_variance(&mut var, prior)
            .ok_or_else(|| Error::Singular("negative predictive variance".into()))?;
        Ok(PredictiveDistribution {
            mean,
            variance_diag: var,
            noise_variance: NoiseVariance::Shared(self.state.sigma2),
        })
    }

    /// Full latent predictive covariance (`N*T × N*T`) in `vec` order.
    pub fn predictive_covariance(&self, x_star: &DenseMatrix) -> Result<DenseMatrix> {
        let (r_star, _) = self.sample_cross(x_star)?;
        let r_ss = crate::kernels::eval_kernel(
            &self.config.sample_kernel,
            &self.params.theta_r,
            x_star,
            x_star,
        )?;
        self.state
            .predictive_covariance(Some(self.basis.matrix()), &self.task_cov, &r_star, &r_ss)
    }
}
