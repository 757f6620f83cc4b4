#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use smtgpr::kernels::one_hot_features;
use smtgpr::smtgpr::{ModelConfig, ModelParams};
use smtgpr::{KernelParams, OrthogonalBasis};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random `t × p` matrix with orthonormal columns.
pub fn orthonormal(rng: &mut impl Rng, t: usize, p: usize) -> DMatrix<f64> {
    let q = normal(rng, t, t).qr().q();
    q.columns(0, p).into_owned()
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub struct Instance {
    pub config: ModelConfig,
    pub basis: OrthogonalBasis,
    pub features: DMatrix<f64>,
    pub params: ModelParams,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub x_star: DMatrix<f64>,
}

/// Small random problem with `N ∈ 3..=10`, `T ∈ 2..=8`, `P ∈ 1..=T` and a
/// noise variance drawn from `{1e-3, 1, 10}`.
pub fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let n = r.random_range(3..=10);
    let t = r.random_range(2..=8);
    let p = r.random_range(1..=t);
    let sigma2: f64 = [1e-3, 1.0, 10.0][r.random_range(0..3)];
    sized_instance(&mut r, n, t, p, sigma2, 4)
}

pub fn sized_instance(r: &mut ChaCha8Rng, n: usize, t: usize, p: usize, sigma2: f64, n_star: usize) -> Instance {
    let config = ModelConfig::new(p);
    let basis = OrthogonalBasis::from_matrix(orthonormal(r, t, p)).unwrap();
    let params = ModelParams {
        theta_c: KernelParams::new(uniform_vec(r, config.task_kernel.n_params(), -1.0, 1.0)),
        theta_r: KernelParams::new(uniform_vec(r, config.sample_kernel.n_params(), -1.0, 1.0)),
        log_sigma2: sigma2.ln(),
    };
    Instance {
        basis,
        features: one_hot_features(p),
        params,
        x: normal(r, n, 3),
        y: normal(r, n, t),
        x_star: normal(r, n_star, 3),
        config,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Max entrywise error relative to the largest reference magnitude.
pub fn mat_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).amax() / b.amax().max(1e-300)
}
