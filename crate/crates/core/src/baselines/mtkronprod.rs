//! Full Kronecker multi-task GP: `vec(Y) ~ N(0, D ⊗ R + σ² I)` with a
//! `T × T` task covariance `D`, diagonalized at every evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::kernels::{cross_kernel, eval_kernel, gram_diag, one_hot_features, GramCache, KernelSpec};
use crate::kron_gp::{KronObjective, KronState, ProjectedData};
use crate::linalg::{ensure_finite, DenseMatrix};
use crate::optim::LbfgsSettings;
use crate::predictive::{clamp_variance, NoiseVariance, PredictiveDistribution};
use crate::smtgpr::{FitReport, ModelParams, DEFAULT_VARIANCE_BATCH};

/// Largest task count accepted by default.
pub const DEFAULT_MAX_TASKS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtKronprodConfig {
    pub sample_kernel: KernelSpec,
    pub task_kernel: KernelSpec,
    #[serde(default)]
    pub optimizer: LbfgsSettings,
    #[serde(default)]
    pub init: Option<ModelParams>,
    #[serde(default = "default_batch")]
    pub variance_batch: usize,
    #[serde(default = "default_max_tasks")]
    pub max_tasks: usize,
}

fn default_batch() -> usize {
    DEFAULT_VARIANCE_BATCH
}

fn default_max_tasks() -> usize {
    DEFAULT_MAX_TASKS
}

impl Default for MtKronprodConfig {
    fn default() -> Self {
        MtKronprodConfig {
            sample_kernel: KernelSpec::linear_se_diag(),
            task_kernel: KernelSpec::linear_se_diag(),
            optimizer: LbfgsSettings::default(),
            init: None,
            variance_batch: DEFAULT_VARIANCE_BATCH,
            max_tasks: DEFAULT_MAX_TASKS,
        }
    }
}

impl MtKronprodConfig {
    pub fn parameter_count(&self) -> usize {
        self.task_kernel.n_params() + self.sample_kernel.n_params() + 1
    }

    fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.variance_batch == 0 {
            return Err(Error::InvalidArgument("variance batch size must be >= 1".into()));
        }
        if let Some(init) = &self.init {
            init.check_layout(&self.task_kernel, &self.sample_kernel)?;
        }
        Ok(())
    }

    fn initial_params(&self) -> ModelParams {
        self.init.clone().unwrap_or_else(|| ModelParams {
            theta_c: self.task_kernel.default_params(),
            theta_r: self.sample_kernel.default_params(),
            log_sigma2: 0.0,
        })
    }
}

fn objective(
    config: &MtKronprodConfig,
    task_features: &DenseMatrix,
    x: &DenseMatrix,
    y: &DenseMatrix,
) -> Result<KronObjective> {
    check_dims("training rows", x.nrows(), y.nrows(), x.nrows() == y.nrows())?;
    if y.ncols() > config.max_tasks {
        return Err(Error::SizeGuard {
            size: y.ncols(),
            limit: config.max_tasks,
        });
    }
    check_dims("task feature rows", y.ncols(), task_features.nrows(), task_features.nrows() == y.ncols())?;
    if x.is_empty() || y.is_empty() {
        return Err(Error::Empty("training data"));
    }
    ensure_finite(x, "training inputs")?;
    ensure_finite(y, "training responses")?;
    Ok(KronObjective {
        task_spec: config.task_kernel.clone(),
        task_cache: GramCache::new(task_features),
        sample_spec: config.sample_kernel.clone(),
        sample_cache: GramCache::new(x),
        data: ProjectedData::full(y),
    })
}

/// Log marginal likelihood of the full Kronecker model.
pub fn mtkronprod_lml(
    config: &MtKronprodConfig,
    task_features: &DenseMatrix,
    params: &ModelParams,
    x: &DenseMatrix,
    y: &DenseMatrix,
) -> Result<f64> {
    Ok(objective(config, task_features, x, y)?
        .evaluate(&params.to_raw(), false)?
        .lml)
}

/// Gradient of [`mtkronprod_lml`] w.r.t. `[Θ_D, Θ_R, ln σ²]`.
pub fn mtkronprod_gradient(
    config: &MtKronprodConfig,
    task_features: &DenseMatrix,
    params: &ModelParams,
    x: &DenseMatrix,
    y: &DenseMatrix,
) -> Result<Vec<f64>> {
    Ok(objective(config, task_features, x, y)?
        .evaluate(&params.to_raw(), true)?
        .gradient
        .expect("gradient requested"))
}

#[derive(Debug, Clone)]
pub struct MtKronprodModel {
    config: MtKronprodConfig,
    task_features: DenseMatrix,
    params: ModelParams,
    train_x: DenseMatrix,
    train_y: DenseMatrix,
    task_cov: DenseMatrix,
    state: KronState,
    report: FitReport,
}

/// Fits with one-hot task features.
pub fn mtkronprod_fit(config: &MtKronprodConfig, x: &DenseMatrix, y: &DenseMatrix) -> Result<MtKronprodModel> {
    mtkronprod_fit_with_features(config, one_hot_features(y.ncols()), x, y)
}

pub fn mtkronprod_fit_with_features(
    config: &MtKronprodConfig,
    task_features: DenseMatrix,
    x: &DenseMatrix,
    y: &DenseMatrix,
) -> Result<MtKronprodModel> {
    config.validate()?;
    let obj = objective(config, &task_features, x, y)?;
    let min = obj.maximize(&config.initial_params().to_raw(), &config.optimizer)?;
    let params = ModelParams::from_raw(&min.x, &config.task_kernel, &config.sample_kernel)?;
    let eval = obj.evaluate(&min.x, false)?;
    Ok(MtKronprodModel {
        config: config.clone(),
        task_features,
        params,
        train_x: x.clone(),
        train_y: y.clone(),
        task_cov: eval.task_cov,
        report: FitReport {
            initial_lml: -min.initial_value,
            final_lml: eval.lml,
            iterations: min.iterations,
            evaluations: min.evaluations,
            termination: min.termination,
            floored_eigenvalues: eval.state.floored,
        },
        state: eval.state,
    })
}

impl MtKronprodModel {
    /// Rebuilds the cached state at given parameters without optimizing.
    pub fn from_params(
        config: MtKronprodConfig,
        task_features: DenseMatrix,
        params: ModelParams,
        x: DenseMatrix,
        y: DenseMatrix,
    ) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config.task_kernel, &config.sample_kernel)?;
        let obj = objective(&config, &task_features, &x, &y)?;
        let eval = obj.evaluate(&params.to_raw(), false)?;
        Ok(MtKronprodModel {
            report: FitReport {
                initial_lml: eval.lml,
                final_lml: eval.lml,
                iterations: 0,
                evaluations: 1,
                termination: crate::optim::Termination::MaxIterations,
                floored_eigenvalues: eval.state.floored,
            },
            config,
            task_features,
            params,
            train_x: x,
            train_y: y,
            task_cov: eval.task_cov,
            state: eval.state,
        })
    }

    pub fn config(&self) -> &MtKronprodConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn task_features(&self) -> &DenseMatrix {
        &self.task_features
    }

    pub fn train_x(&self) -> &DenseMatrix {
        &self.train_x
    }

    pub fn train_y(&self) -> &DenseMatrix {
        &self.train_y
    }

    pub fn sigma2(&self) -> f64 {
        self.state.sigma2
    }

    pub fn report(&self) -> &FitReport {
        &self.report
    }

    pub fn final_lml(&self) -> f64 {
        self.report.final_lml
    }

    pub fn parameter_count(&self) -> usize {
        self.config.parameter_count()
    }

    fn sample_cross(&self, x_star: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
        check_dims(
            "test feature count",
            self.train_x.ncols(),
            x_star.ncols(),
            x_star.ncols() == self.train_x.ncols(),
        )?;
        ensure_finite(x_star, "test inputs")?;
        let r_star = cross_kernel(&self.config.sample_kernel, &self.params.theta_r, x_star, &self.train_x)?;
        let r_diag = gram_diag(&self.config.sample_kernel, &self.params.theta_r, x_star)?;
        Ok((r_star, r_diag))
    }

    pub fn predict(&self, x_star: &DenseMatrix) -> Result<PredictiveDistribution> {
        let (r_star, r_diag) = self.sample_cross(x_star)?;
        let (mean, mut var) =
            self.state
                .predict(None, &self.task_cov, &r_star, &r_diag, self.config.variance_batch)?;
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

    pub fn predictive_covariance(&self, x_star: &DenseMatrix) -> Result<DenseMatrix> {
        let (r_star, _) = self.sample_cross(x_star)?;
        let r_ss = eval_kernel(&self.config.sample_kernel, &self.params.theta_r, x_star, x_star)?;
        self.state.predictive_covariance(None, &self.task_cov, &r_star, &r_ss)
    }
}
