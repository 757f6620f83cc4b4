//! Repeated fit / predict / score runs over the configured methods, with
//! per-run report rows and mean/sd aggregates.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use smtgpr::baselines::{mtkronprod_fit, stgpr_fit, MtKronprodConfig, StgprConfig};
use smtgpr::normative::{abnormality_score, auc, compute_npm, r_squared, RobustMean};
use smtgpr::optim::Termination;
use smtgpr::smtgpr::{fit, ModelConfig};
use smtgpr::{DenseMatrix, PredictiveDistribution};

use crate::config::{DataSource, ExperimentConfig, Method};
use crate::error::{io_err, HarnessError, Result};
use crate::io::{load_labels, load_matrix, MatrixFormat};
use crate::synth::generate_synthetic;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x_train: DenseMatrix,
    pub y_train: DenseMatrix,
    pub x_test: DenseMatrix,
    pub y_test: DenseMatrix,
    pub labels: Vec<bool>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(HarnessError::Dimension(m));
        if self.x_train.nrows() != self.y_train.nrows() {
            return err(format!("x_train has {} rows, y_train {}", self.x_train.nrows(), self.y_train.nrows()));
        }
        if self.x_test.nrows() != self.y_test.nrows() || self.labels.len() != self.y_test.nrows() {
            return err(format!(
                "x_test, y_test and labels have {}, {} and {} rows",
                self.x_test.nrows(),
                self.y_test.nrows(),
                self.labels.len()
            ));
        }
        if self.x_train.ncols() != self.x_test.ncols() {
            return err(format!("feature counts differ: {} vs {}", self.x_train.ncols(), self.x_test.ncols()));
        }
        if self.y_train.ncols() != self.y_test.ncols() {
            return err(format!("task counts differ: {} vs {}", self.y_train.ncols(), self.y_test.ncols()));
        }
        Ok(())
    }

    /// Subtracts the training column means from training and test responses.
    pub fn centered(mut self) -> Self {
        for j in 0..self.y_train.ncols() {
            let m = self.y_train.column(j).mean();
            self.y_train.column_mut(j).add_scalar_mut(-m);
            self.y_test.column_mut(j).add_scalar_mut(-m);
        }
        self
    }

    pub fn normal_rows(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| !self.labels[i]).collect()
    }
}

pub fn load_dataset(source: &DataSource, seed: u64) -> Result<Dataset> {
    let data = match source {
        DataSource::Synthetic(spec) => {
            let d = generate_synthetic(spec, seed)?;
            Dataset {
                x_train: d.x_train,
                y_train: d.y_train,
                x_test: d.x_test,
                y_test: d.y_test,
                labels: d.labels,
            }
        }
        DataSource::Files(files) => {
            let fmt = |p: &Path| files.format.unwrap_or_else(|| MatrixFormat::from_path(p));
            Dataset {
                x_train: load_matrix(&files.x_train, fmt(&files.x_train))?,
                y_train: load_matrix(&files.y_train, fmt(&files.y_train))?,
                x_test: load_matrix(&files.x_test, fmt(&files.x_test))?,
                y_test: load_matrix(&files.y_test, fmt(&files.y_test))?,
                labels: load_labels(&files.labels, fmt(&files.labels))?,
            }
        }
    };
    data.validate()?;
    Ok(data)
}

/// A fitted method's test-set predictions and bookkeeping.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub prediction: PredictiveDistribution,
    pub optimization_seconds: f64,
    pub prediction_seconds: f64,
    pub final_lml: f64,
    pub parameter_count: usize,
    pub warnings: Vec<String>,
}

fn termination_warning(t: Termination) -> Option<String> {
    match t {
        Termination::GradientTolerance | Termination::FunctionTolerance => None,
        other => Some(format!("optimizer stopped: {other:?}")),
    }
}

/// Fits one method on the training split and predicts the test inputs.
pub fn run_method(method: Method, p: Option<usize>, config: &ExperimentConfig, data: &Dataset) -> Result<MethodRun> {
    let (sample_kernel, task_kernel, single_kernel) = config.kernels.specs()?;
    let mut warnings = Vec::new();
    match method {
        Method::Smtgpr => {
            let p = p.ok_or_else(|| HarnessError::Config("smtgpr needs a basis size".into()))?;
            let model_config = ModelConfig {
                sample_kernel,
                task_kernel,
                p,
                optimizer: config.optimizer,
                init: None,
                variance_batch: config.variance_batch,
            };
            let start = Instant::now();
            let model = fit(&model_config, &data.x_train, &data.y_train)?;
            let optimization_seconds = start.elapsed().as_secs_f64();
            let start = Instant::now();
            let prediction = model.predict(&data.x_test)?;
            let prediction_seconds = start.elapsed().as_secs_f64();
            warnings.extend(termination_warning(model.report().termination));
            if model.report().floored_eigenvalues > 0 {
                warnings.push(format!("{} floored eigenvalues", model.report().floored_eigenvalues));
            }
            Ok(MethodRun {
                prediction,
                optimization_seconds,
                prediction_seconds,
                final_lml: model.final_lml(),
                parameter_count: model_config.parameter_count(),
                warnings,
            })
        }
        Method::MtKronprod => {
            let mt_config = MtKronprodConfig {
                sample_kernel,
                task_kernel,
                optimizer: config.mt_kronprod_optimizer.unwrap_or(config.optimizer),
                variance_batch: config.variance_batch,
                ..Default::default()
            };
            let start = Instant::now();
            let model = mtkronprod_fit(&mt_config, &data.x_train, &data.y_train)?;
            let optimization_seconds = start.elapsed().as_secs_f64();
            let start = Instant::now();
            let prediction = model.predict(&data.x_test)?;
            let prediction_seconds = start.elapsed().as_secs_f64();
            warnings.extend(termination_warning(model.report().termination));
            if model.report().floored_eigenvalues > 0 {
                warnings.push(format!("{} floored eigenvalues", model.report().floored_eigenvalues));
            }
            Ok(MethodRun {
                prediction,
                optimization_seconds,
                prediction_seconds,
                final_lml: model.final_lml(),
                parameter_count: model.parameter_count(),
                warnings,
            })
        }
        Method::Stgpr => {
            let st_config = StgprConfig {
                kernel: single_kernel,
                optimizer: config.optimizer,
                init: None,
            };
            let start = Instant::now();
            let model = stgpr_fit(&st_config, &data.x_train, &data.y_train)?;
            let optimization_seconds = start.elapsed().as_secs_f64();
            let start = Instant::now();
            let prediction = model.predict(&data.x_test)?;
            let prediction_seconds = start.elapsed().as_secs_f64();
            if model.failed_tasks() > 0 {
                warnings.push(format!("{} task fits failed", model.failed_tasks()));
            }
            let unconverged = model
                .tasks()
                .iter()
                .filter_map(|t| t.fit())
                .filter(|f| termination_warning(f.termination).is_some())
                .count();
            if unconverged > 0 {
                warnings.push(format!("{unconverged} task fits stopped before convergence"));
            }
            Ok(MethodRun {
                prediction,
                optimization_seconds,
                prediction_seconds,
                final_lml: model.total_lml(),
                parameter_count: model.parameter_count(),
                warnings,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean per-task R² over the normal test rows.
    pub mean_r2: f64,
    pub auc: f64,
    /// Abnormality score per test row.
    pub scores: Vec<f64>,
    pub warnings: Vec<String>,
}

fn select_rows(m: &DenseMatrix, rows: &[usize]) -> DenseMatrix {
    m.select_rows(rows.iter())
}

/// R² on normal rows plus NPM-based abnormality scores and AUC on all rows.
pub fn evaluate(
    prediction: &PredictiveDistribution,
    y_test: &DenseMatrix,
    labels: &[bool],
    top_fraction: f64,
    robust: RobustMean,
) -> Result<Evaluation> {
    let mut warnings = Vec::new();
    let normal: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let abnormal: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();

    let mean_r2 = if normal.len() >= 2 {
        let r2 = r_squared(&select_rows(y_test, &normal), &select_rows(&prediction.mean, &normal))?;
        if r2.excluded > 0 {
            warnings.push(format!("{} tasks excluded from R²", r2.excluded));
        }
        r2.mean
    } else {
        warnings.push("fewer than 2 normal test rows; R² undefined".into());
        f64::NAN
    };

    let npm = compute_npm(y_test, prediction)?;
    let scores = abnormality_score(&npm, top_fraction, robust)?;
    let auc = if normal.is_empty() || abnormal.is_empty() {
        warnings.push("AUC needs both normal and abnormal test rows".into());
        f64::NAN
    } else {
        let pick = |idx: &[usize]| idx.iter().map(|&i| scores[i]).collect::<Vec<_>>();
        auc(&pick(&normal), &pick(&abnormal))?
    };
    Ok(Evaluation {
        mean_r2,
        auc,
        scores,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    Mean,
    Sd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Repetition {
    Index(usize),
    Aggregate(Aggregate),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub p: Option<usize>,
    pub repetition: Repetition,
    pub optimization_seconds: f64,
    pub prediction_seconds: f64,
    pub mean_r2: f64,
    pub auc: f64,
    pub final_lml: f64,
    pub parameter_count: usize,
    pub warnings: String,
}

impl ReportRow {
    fn failed(method: Method, p: Option<usize>, rep: usize, err: &HarnessError) -> Self {
        ReportRow {
            method,
            p,
            repetition: Repetition::Index(rep),
            optimization_seconds: f64::NAN,
            prediction_seconds: f64::NAN,
            mean_r2: f64::NAN,
            auc: f64::NAN,
            final_lml: f64::NAN,
            parameter_count: 0,
            warnings: format!("failed: {err}"),
        }
    }

    fn numeric(&self) -> [f64; 5] {
        [
            self.optimization_seconds,
            self.prediction_seconds,
            self.mean_r2,
            self.auc,
            self.final_lml,
        ]
    }
}

/// Mean over the finite entries; NaN when there are none.
pub fn finite_mean(values: &[f64]) -> f64 {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sample standard deviation over the finite entries; NaN below two values.
pub fn finite_sd(values: &[f64]) -> f64 {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Mean and sd rows for every `(method, p)` group, in first-seen order.
pub fn aggregate_rows(rows: &[ReportRow]) -> Vec<ReportRow> {
    let mut order: Vec<(Method, Option<usize>)> = Vec::new();
    let mut groups: BTreeMap<(Method, Option<usize>), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| matches!(r.repetition, Repetition::Index(_))) {
        let key = (r.method, r.p);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    let mut out = Vec::new();
    for key in order {
        let members = &groups[&key];
        let columns: Vec<Vec<f64>> = (0..5).map(|k| members.iter().map(|r| r.numeric()[k]).collect()).collect();
        let failures = members.iter().filter(|r| !r.warnings.is_empty()).count();
        let warnings = if failures > 0 {
            format!("{failures} of {} runs with warnings", members.len())
        } else {
            String::new()
        };
        let parameter_count = members.iter().map(|r| r.parameter_count).max().unwrap_or(0);
        for (kind, stat) in [(Aggregate::Mean, finite_mean as fn(&[f64]) -> f64), (Aggregate::Sd, finite_sd)] {
            out.push(ReportRow {
                method: key.0,
                p: key.1,
                repetition: Repetition::Aggregate(kind),
                optimization_seconds: stat(&columns[0]),
                prediction_seconds: stat(&columns[1]),
                mean_r2: stat(&columns[2]),
                auc: stat(&columns[3]),
                final_lml: stat(&columns[4]),
                parameter_count,
                warnings: warnings.clone(),
            });
        }
    }
    out
}

/// The `(method, p)` runs for one repetition, skipping basis sizes that
/// exceed `min(N, T)`.
pub fn planned_runs(config: &ExperimentConfig, n_train: usize, n_tasks: usize) -> Vec<(Method, Option<usize>)> {
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();
    let mut runs = Vec::new();
    for m in methods {
        if m == Method::Smtgpr {
            for &p in &config.p_grid {
                if p <= n_train.min(n_tasks) {
                    runs.push((m, Some(p)));
                } else {
                    log::warn!("skipping p = {p}: exceeds min(N, T) = {}", n_train.min(n_tasks));
                }
            }
        } else {
            runs.push((m, None));
        }
    }
    runs
}

/// Runs every repetition and returns per-run rows followed by aggregates.
/// Methods run sequentially so their timings do not overlap.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for rep in 0..config.repetitions {
        let seed = config.seed.wrapping_add(rep as u64);
        let mut data = load_dataset(&config.data, seed)?;
        if config.center {
            data = data.centered();
        }
        for (method, p) in planned_runs(config, data.y_train.nrows(), data.y_train.ncols()) {
            log::info!("repetition {rep}: {method} p={p:?}");
            let row = run_method(method, p, config, &data).and_then(|run| {
                let eval = evaluate(&run.prediction, &data.y_test, &data.labels, config.top_fraction, config.robust_mean)?;
                let mut warnings = run.warnings;
                warnings.extend(eval.warnings);
                Ok(ReportRow {
                    method,
                    p,
                    repetition: Repetition::Index(rep),
                    optimization_seconds: run.optimization_seconds,
                    prediction_seconds: run.prediction_seconds,
                    mean_r2: eval.mean_r2,
                    auc: eval.auc,
                    final_lml: run.final_lml,
                    parameter_count: run.parameter_count,
                    warnings: warnings.join("; "),
                })
            });
            rows.push(row.unwrap_or_else(|e| {
                log::error!("{method} p={p:?} repetition {rep}: {e}");
                ReportRow::failed(method, p, rep, &e)
            }));
        }
    }
    let aggregates = aggregate_rows(&rows);
    rows.extend(aggregates);
    Ok(rows)
}

pub fn report_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("csv"), stem.with_extension("jsonl"))
}

pub fn write_report(rows: &[ReportRow], stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let (csv_path, jsonl_path) = report_paths(stem);
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut writer = csv::Writer::from_path(&csv_path)?;
    for r in rows {
        writer.serialize(r)?;
    }
    writer.flush().map_err(io_err(&csv_path))?;

    let file = File::create(&jsonl_path).map_err(io_err(&jsonl_path))?;
    let mut out = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(io_err(&jsonl_path))?;
    }
    out.flush().map_err(io_err(&jsonl_path))?;
    Ok((csv_path, jsonl_path))
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?)
}
