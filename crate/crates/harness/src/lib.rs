//! Experiment harness for the Kronecker multi-task GP models: matrix IO,
//! synthetic data, configuration, experiment runs and model files.

// Negated float comparisons are used on purpose so that NaN fails checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod model_file;
pub mod synth;

pub use config::{DataSource, ExperimentConfig, Method};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, Dataset, ReportRow};
pub use synth::{generate_synthetic, SyntheticSpec};
