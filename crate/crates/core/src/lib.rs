//! Multi-task Gaussian process regression with Kronecker-structured
//! covariance and a low-rank orthonormal task basis, with single-task and
//! full-Kronecker baselines and normative-modeling evaluation.
//!
//! The main model places `vec(Y) ~ N(0, B C Bᵀ ⊗ R + σ² I)` on an `N × T`
//! response matrix, with `B` a `T × P` PCA basis, `C` a `P × P` task
//! covariance and `R` an `N × N` sample covariance. Likelihood, gradients and
//! predictions are evaluated through eigendecompositions of `C` and `R`
//! without forming any `NT × NT` matrix.

// Negated float comparisons are used on purpose so that NaN fails checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod basis;
pub mod dense;
pub mod error;
pub mod kernels;
mod kron_gp;
pub mod linalg;
pub mod normative;
pub mod optim;
pub mod predictive;
pub mod smtgpr;

pub use basis::{fit_basis, project, OrthogonalBasis};
pub use error::{Error, Result};
pub use kernels::{KernelParams, KernelSpec, KernelTerm};
pub use linalg::{DenseMatrix, EigenDecomposition};
pub use predictive::{NoiseVariance, PredictiveDistribution};
pub use smtgpr::{fit, ModelConfig, ModelParams, TrainedModel};
