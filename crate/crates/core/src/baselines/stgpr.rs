//! Mass-univariate baseline: one independent GP per task, each with its own
//! kernel parameters and noise variance.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gpr;
use crate::error::{check_dims, Error, Result};
use crate::kernels::{cross_kernel, gram_diag, GramCache, KernelParams, KernelSpec};
use crate::linalg::{ensure_finite, DenseMatrix};
use crate::optim::{minimize_lbfgs, LbfgsSettings, Termination};
use crate::predictive::{clamp_variance, NoiseVariance, PredictiveDistribution};

/// Mean column, latent variance column and noise variance of one task.
type TaskPrediction = (DVector<f64>, DVector<f64>, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StgprConfig {
    pub kernel: KernelSpec,
    #[serde(default)]
    pub optimizer: LbfgsSettings,
    /// Starting raw parameters `[Θ_kernel, ln σ²]`; zeros when absent.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
}

impl Default for StgprConfig {
    fn default() -> Self {
        StgprConfig {
            kernel: KernelSpec::linear_se(),
            optimizer: LbfgsSettings::default(),
            init: None,
        }
    }
}

impl StgprConfig {
    pub fn params_per_task(&self) -> usize {
        self.kernel.n_params() + 1
    }

    pub fn parameter_count(&self, n_tasks: usize) -> usize {
        self.params_per_task() * n_tasks
    }

    fn initial_raw(&self) -> Result<Vec<f64>> {
        match &self.init {
            Some(v) => {
                check_dims("initial parameters", self.params_per_task(), v.len(), v.len() == self.params_per_task())?;
                Ok(v.clone())
            }
            None => Ok(vec![0.0; self.params_per_task()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFit {
    pub kernel_params: KernelParams,
    pub log_sigma2: f64,
    pub lml: f64,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOutcome {
    Fitted(TaskFit),
    Failed(String),
}

impl TaskOutcome {
    pub fn fit(&self) -> Option<&TaskFit> {
        match self {
            TaskOutcome::Fitted(f) => Some(f),
            TaskOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StgprModel {
    config: StgprConfig,
    train_x: DenseMatrix,
    train_y: DenseMatrix,
    tasks: Vec<TaskOutcome>,
}

/// Log marginal likelihood of one task column at raw parameters `[Θ, ln σ²]`.
pub fn single_task_lml(spec: &KernelSpec, raw: &[f64], x: &DenseMatrix, y: &DVector<f64>) -> Result<f64> {
    check_dims("single-task parameters", spec.n_params() + 1, raw.len(), raw.len() == spec.n_params() + 1)?;
    check_dims("single-task rows", x.nrows(), y.len(), x.nrows() == y.len())?;
    Ok(gpr::lml_and_gradient(spec, &GramCache::new(x), raw, y, false)?.0)
}

/// Gradient of [`single_task_lml`].
pub fn single_task_gradient(
    spec: &KernelSpec,
    raw: &[f64],
    x: &DenseMatrix,
    y: &DVector<f64>,
) -> Result<Vec<f64>> {
    check_dims("single-task parameters", spec.n_params() + 1, raw.len(), raw.len() == spec.n_params() + 1)?;
    check_dims("single-task rows", x.nrows(), y.len(), x.nrows() == y.len())?;
    let (_, g) = gpr::lml_and_gradient(spec, &GramCache::new(x), raw, y, true)?;
    Ok(g.expect("gradient requested"))
}

fn fit_task(config: &StgprConfig, cache: &GramCache, init: &[f64], y: DVector<f64>) -> TaskOutcome {
    let objective = |raw: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (lml, g) = gpr::lml_and_gradient(&config.kernel, cache, raw, &y, true)?;
        Ok((-lml, g.expect("gradient requested").into_iter().map(|v| -v).collect()))
    };
    match minimize_lbfgs(objective, init, &config.optimizer) {
        Ok(min) => {
            let nk = config.kernel.n_params();
            TaskOutcome::Fitted(TaskFit {
                kernel_params: KernelParams::new(min.x[..nk].to_vec()),
                log_sigma2: min.x[nk],
                lml: -min.value,
                iterations: min.iterations,
                termination: min.termination,
            })
        }
        Err(e) => TaskOutcome::Failed(e.to_string()),
    }
}

/// Fits every task column independently. A failing task is recorded and
/// does not stop the others.
pub fn stgpr_fit(config: &StgprConfig, x: &DenseMatrix, y: &DenseMatrix) -> Result<StgprModel> {
    config.optimizer.validate()?;
    check_dims("training rows", x.nrows(), y.nrows(), x.nrows() == y.nrows())?;
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument("need at least 2 training samples".into()));
    }
    ensure_finite(x, "training inputs")?;
    let init = config.initial_raw()?;
    let cache = GramCache::new(x);
    let tasks: Vec<TaskOutcome> = (0..y.ncols())
        .into_par_iter()
        .map(|t| {
            let col = y.column(t).clone_owned();
            if col.iter().any(|v| !v.is_finite()) {
                return TaskOutcome::Failed("non-finite responses".into());
            }
            fit_task(config, &cache, &init, col)
        })
        .collect();
    Ok(StgprModel {
        config: config.clone(),
        train_x: x.clone(),
        train_y: y.clone(),
        tasks,
    })
}

impl StgprModel {
    /// Rebuilds a model from stored per-task outcomes.
    pub fn from_parts(
        config: StgprConfig,
        train_x: DenseMatrix,
        train_y: DenseMatrix,
        tasks: Vec<TaskOutcome>,
    ) -> Result<Self> {
        check_dims("task outcomes", train_y.ncols(), tasks.len(), tasks.len() == train_y.ncols())?;
        check_dims("training rows", train_x.nrows(), train_y.nrows(), train_x.nrows() == train_y.nrows())?;
        Ok(StgprModel {
            config,
            train_x,
            train_y,
            tasks,
        })
    }

    pub fn config(&self) -> &StgprConfig {
        &self.config
    }

    pub fn tasks(&self) -> &[TaskOutcome] {
        &self.tasks
    }

    pub fn train_x(&self) -> &DenseMatrix {
        &self.train_x
    }

    pub fn train_y(&self) -> &DenseMatrix {
        &self.train_y
    }

    pub fn parameter_count(&self) -> usize {
        self.config.parameter_count(self.tasks.len())
    }

    pub fn failed_tasks(&self) -> usize {
        self.tasks.iter().filter(|t| t.fit().is_none()).count()
    }

    /// Sum of the per-task log marginal likelihoods over fitted tasks.
    pub fn total_lml(&self) -> f64 {
        self.tasks.iter().filter_map(|t| t.fit()).map(|f| f.lml).sum()
    }

    /// Per-task predictions; columns of failed tasks are NaN.
    pub fn predict(&self, x_star: &DenseMatrix) -> Result<PredictiveDistribution> {
        check_dims(
            "test feature count",
            self.train_x.ncols(),
            x_star.ncols(),
            x_star.ncols() == self.train_x.ncols(),
        )?;
        ensure_finite(x_star, "test inputs")?;
        let cache = GramCache::new(&self.train_x);
        let spec = &self.config.kernel;
        let n_star = x_star.nrows();

        let columns: Vec<Result<TaskPrediction>> = self
            .tasks
            .par_iter()
            .enumerate()
            .map(|(t, outcome)| {
                let Some(fit) = outcome.fit() else {
                    let nan = DVector::from_element(n_star, f64::NAN);
                    return Ok((nan.clone(), nan, f64::NAN));
                };
                let mut raw = fit.kernel_params.raw.clone();
                raw.push(fit.log_sigma2);
                let (chol, _, sigma2) = gpr::factor(spec, &cache, &raw, false)?;
                let k_star = cross_kernel(spec, &fit.kernel_params, x_star, &self.train_x)?;
                let k_diag = gram_diag(spec, &fit.kernel_params, x_star)?;
                let y = self.train_y.column(t).clone_owned();
                let (mean, var) = gpr::predict(&chol, &y, &k_star, &k_diag);
                Ok((mean, var, sigma2))
            })
            .collect();

        let t = self.tasks.len();
        let mut mean = DenseMatrix::zeros(n_star, t);
        let mut var = DenseMatrix::zeros(n_star, t);
        let mut noise = Vec::with_capacity(t);
        let mut prior = 0.0_f64;
        for (j, col) in columns.into_iter().enumerate() {
            let (m, v, s2) = col?;
            mean.set_column(j, &m);
            var.set_column(j, &v);
            noise.push(s2);
            if let Some(fit) = self.tasks[j].fit() {
                let d = gram_diag(spec, &fit.kernel_params, x_star)?;
                prior = prior.max(d.iter().cloned().fold(0.0, f64::max));
            }
        }
        clamp_variance(&mut var, prior)
            .ok_or_else(|| Error::Singular("negative predictive variance".into()))?;
        Ok(PredictiveDistribution {
            mean,
            variance_diag: var,
            noise_variance: NoiseVariance::PerTask(noise),
        })
    }
}
