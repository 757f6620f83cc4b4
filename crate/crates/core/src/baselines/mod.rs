//! Comparison models: independent per-task GPs and the full Kronecker GP.

mod gpr;
pub mod mtkronprod;
pub mod stgpr;

pub use mtkronprod::{
    mtkronprod_fit, mtkronprod_fit_with_features, mtkronprod_gradient, mtkronprod_lml, MtKronprodConfig,
    MtKronprodModel,
};
pub use stgpr::{
    single_task_gradient, single_task_lml, stgpr_fit, StgprConfig, StgprModel, TaskFit, TaskOutcome,
};
