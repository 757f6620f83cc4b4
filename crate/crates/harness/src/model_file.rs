//! Fitted-model files: `KGPMODEL`, a version byte, a little-endian `u64`
//! header length, a JSON header with configuration and parameters, then the
//! training inputs and responses as binary matrices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use smtgpr::baselines::{MtKronprodConfig, MtKronprodModel, StgprConfig, StgprModel, TaskOutcome};
use smtgpr::smtgpr::{ModelConfig, ModelParams, TrainedModel};
use smtgpr::{DenseMatrix, OrthogonalBasis, PredictiveDistribution};

use crate::config::Method;
use crate::error::{io_err, HarnessError, Result};
use crate::io::{read_binary, write_binary};

pub const MODEL_MAGIC: &[u8; 8] = b"KGPMODEL";
pub const MODEL_VERSION: u8 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
enum Header {
    Smtgpr {
        config: ModelConfig,
        basis: OrthogonalBasis,
        task_features: DenseMatrix,
        params: ModelParams,
    },
    MtKronprod {
        config: MtKronprodConfig,
        task_features: DenseMatrix,
        params: ModelParams,
    },
    Stgpr {
        config: StgprConfig,
        tasks: Vec<TaskOutcome>,
    },
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Smtgpr(TrainedModel),
    MtKronprod(MtKronprodModel),
    Stgpr(StgprModel),
}

impl FittedModel {
    pub fn method(&self) -> Method {
        match self {
            FittedModel::Smtgpr(_) => Method::Smtgpr,
            FittedModel::MtKronprod(_) => Method::MtKronprod,
            FittedModel::Stgpr(_) => Method::Stgpr,
        }
    }

    pub fn predict(&self, x_star: &DenseMatrix) -> Result<PredictiveDistribution> {
        Ok(match self {
            FittedModel::Smtgpr(m) => m.predict(x_star)?,
            FittedModel::MtKronprod(m) => m.predict(x_star)?,
            FittedModel::Stgpr(m) => m.predict(x_star)?,
        })
    }

    fn train_data(&self) -> (&DenseMatrix, &DenseMatrix) {
        match self {
            FittedModel::Smtgpr(m) => (m.train_x(), m.train_y()),
            FittedModel::MtKronprod(m) => (m.train_x(), m.train_y()),
            FittedModel::Stgpr(m) => (m.train_x(), m.train_y()),
        }
    }

    fn header(&self) -> Header {
        match self {
            FittedModel::Smtgpr(m) => Header::Smtgpr {
                config: m.config().clone(),
                basis: m.basis().clone(),
                task_features: m.task_features().clone(),
                params: m.params().clone(),
            },
            FittedModel::MtKronprod(m) => Header::MtKronprod {
                config: m.config().clone(),
                task_features: m.task_features().clone(),
                params: m.params().clone(),
            },
            FittedModel::Stgpr(m) => Header::Stgpr {
                config: m.config().clone(),
                tasks: m.tasks().to_vec(),
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.header())?;
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        let (x, y) = self.train_data();
        (|| -> std::io::Result<()> {
            out.write_all(MODEL_MAGIC)?;
            out.write_all(&[MODEL_VERSION])?;
            out.write_all(&(header.len() as u64).to_le_bytes())?;
            out.write_all(&header)?;
            write_binary(&mut out, x)?;
            write_binary(&mut out, y)?;
            out.flush()
        })()
        .map_err(io_err(path))
    }

    /// Reads a model file and rebuilds the cached factorizations.
    pub fn load(path: &Path) -> Result<Self> {
        let malformed = |reason: String| HarnessError::Malformed {
            path: path.to_path_buf(),
            format: "model",
            reason,
        };
        let file = File::open(path).map_err(io_err(path))?;
        let mut input = BufReader::new(file);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| malformed("truncated header".into()))?;
        if &magic != MODEL_MAGIC {
            return Err(malformed("bad magic".into()));
        }
        let mut version = [0u8; 1];
        input.read_exact(&mut version).map_err(|_| malformed("truncated header".into()))?;
        if version[0] != MODEL_VERSION {
            return Err(malformed(format!("unsupported version {}", version[0])));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len).map_err(|_| malformed("truncated header".into()))?;
        let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| malformed("header too large".into()))?;
        let mut header = Vec::new();
        (&mut input)
            .take(len as u64)
            .read_to_end(&mut header)
            .map_err(io_err(path))?;
        if header.len() != len {
            return Err(malformed("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&header)?;
        let x = read_binary(&mut input).map_err(malformed)?;
        let y = read_binary(&mut input).map_err(malformed)?;
        Ok(match header {
            Header::Smtgpr {
                config,
                basis,
                task_features,
                params,
            } => FittedModel::Smtgpr(TrainedModel::from_params(config, basis, task_features, params, x, y)?),
            Header::MtKronprod {
                config,
                task_features,
                params,
            } => FittedModel::MtKronprod(MtKronprodModel::from_params(config, task_features, params, x, y)?),
            Header::Stgpr { config, tasks } => FittedModel::Stgpr(StgprModel::from_parts(config, x, y, tasks)?),
        })
    }
}
