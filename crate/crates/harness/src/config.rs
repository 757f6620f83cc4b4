//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smtgpr::kernels::{KernelSpec, KernelTerm};
use smtgpr::normative::{RobustMean, DEFAULT_TOP_FRACTION};
use smtgpr::optim::LbfgsSettings;
use smtgpr::smtgpr::DEFAULT_VARIANCE_BATCH;

use crate::error::{io_err, HarnessError, Result};
use crate::io::MatrixFormat;
use crate::synth::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Stgpr,
    MtKronprod,
    Smtgpr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Stgpr => "stgpr",
            Method::MtKronprod => "mt-kronprod",
            Method::Smtgpr => "smtgpr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Files(FileData),
}

/// Pre-split data on disk. Labels hold one 0/1 value per test row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub x_train: PathBuf,
    pub y_train: PathBuf,
    pub x_test: PathBuf,
    pub y_test: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub format: Option<MatrixFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub sample: Vec<KernelTerm>,
    pub task: Vec<KernelTerm>,
    pub single_task: Vec<KernelTerm>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            sample: KernelSpec::linear_se_diag().terms().to_vec(),
            task: KernelSpec::linear_se_diag().terms().to_vec(),
            single_task: KernelSpec::linear_se().terms().to_vec(),
        }
    }
}

impl KernelConfig {
    pub fn specs(&self) -> Result<(KernelSpec, KernelSpec, KernelSpec)> {
        let mk = |terms: &Vec<KernelTerm>, what: &str| {
            KernelSpec::new(terms.clone()).map_err(|e| HarnessError::Config(format!("{what} kernel: {e}")))
        };
        Ok((mk(&self.sample, "sample")?, mk(&self.task, "task")?, mk(&self.single_task, "single-task")?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repetitions: usize,
    pub methods: Vec<Method>,
    pub p_grid: Vec<usize>,
    /// Subtract training column means from all responses before modeling.
    pub center: bool,
    pub top_fraction: f64,
    pub robust_mean: RobustMean,
    pub variance_batch: usize,
    pub data: DataSource,
    pub kernels: KernelConfig,
    pub optimizer: LbfgsSettings,
    /// Optimizer settings for the full Kronecker baseline; defaults to
    /// `optimizer`.
    pub mt_kronprod_optimizer: Option<LbfgsSettings>,
    /// Report path stem: `<output>.csv` and `<output>.jsonl`.
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            repetitions: 10,
            methods: vec![Method::Stgpr, Method::MtKronprod, Method::Smtgpr],
            p_grid: vec![5, 10, 25, 50],
            center: true,
            top_fraction: DEFAULT_TOP_FRACTION,
            robust_mean: RobustMean::default(),
            variance_batch: DEFAULT_VARIANCE_BATCH,
            data: DataSource::Synthetic(SyntheticSpec::default()),
            kernels: KernelConfig::default(),
            optimizer: LbfgsSettings::default(),
            mt_kronprod_optimizer: None,
            output: PathBuf::from("report"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file. Relative data paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut config = Self::from_toml_str(&text)?;
        if let (DataSource::Files(files), Some(dir)) = (&mut config.data, path.parent()) {
            for p in [
                &mut files.x_train,
                &mut files.y_train,
                &mut files.x_test,
                &mut files.y_test,
                &mut files.labels,
            ] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.methods.contains(&Method::Smtgpr) && (self.p_grid.is_empty() || self.p_grid.contains(&0)) {
            return bad("p_grid must contain positive values when smtgpr is selected".into());
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return bad(format!("top_fraction {} outside (0, 1]", self.top_fraction));
        }
        if self.variance_batch == 0 {
            return bad("variance_batch must be >= 1".into());
        }
        self.kernels.specs()?;
        self.optimizer.validate()?;
        if let Some(o) = &self.mt_kronprod_optimizer {
            o.validate()?;
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = ExperimentConfig::from_toml_str(
            r#"
            seed = 4
            methods = ["smtgpr"]
            p_grid = [3]
            [data]
            source = "synthetic"
            n_tasks = 50
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.repetitions, 10);
        match c.data {
            DataSource::Synthetic(s) => {
                assert_eq!(s.n_tasks, 50);
                assert_eq!(s.n_train, 150);
            }
            _ => panic!("expected synthetic data"),
        }
    }

    #[test]
    fn rejects_invalid() {
        assert!(ExperimentConfig::from_toml_str("repetitions = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("unknown_key = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("p_grid = []").is_err());
        assert!(ExperimentConfig::from_toml_str("[kernels]\nsample = []").is_err());
    }
}
