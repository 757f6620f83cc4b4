mod common;

use nalgebra::{DMatrix, DVector};
use smtgpr::baselines::{
    mtkronprod_fit, mtkronprod_lml, single_task_gradient, single_task_lml, stgpr_fit, MtKronprodConfig,
    StgprConfig,
};
use smtgpr::dense::dense_lml;
use smtgpr::kernels::{cross_kernel, eval_kernel, gram_diag, KernelSpec, KernelTerm};
use smtgpr::linalg::kron_product;
use smtgpr::smtgpr::{fit, ModelConfig, ModelParams};
use smtgpr::KernelParams;

/// Draws `Y` from `N(0, D ⊗ R + σ² I)`.
fn sample_kronecker(seed: u64, d: &DMatrix<f64>, r: &DMatrix<f64>, sigma2: f64) -> DMatrix<f64> {
    let (n, t) = (r.nrows(), d.nrows());
    let k = kron_product(d, r).unwrap() + DMatrix::identity(n * t, n * t) * sigma2;
    let l = k.cholesky().unwrap().l();
    let z = common::normal(&mut common::rng(seed), n * t, 1);
    let v = l * z;
    DMatrix::from_column_slice(n, t, v.as_slice())
}

#[test]
fn fit_never_decreases_likelihood() {
    let mut r = common::rng(1);
    let x = common::normal(&mut r, 40, 3);
    let grid = DMatrix::from_fn(20, 1, |i, _| i as f64 / 4.0);
    let se = KernelSpec::new(vec![KernelTerm::SquaredExponential]).unwrap();
    let d = eval_kernel(&se, &KernelParams::new(vec![0.0, 0.0]), &grid, &grid).unwrap();
    let rk = eval_kernel(&KernelSpec::linear_se(), &KernelParams::new(vec![-1.0, 0.0, 0.5]), &x, &x).unwrap();
    let y = sample_kronecker(2, &d, &rk, 0.1);
    let model = fit(&ModelConfig::new(5), &x, &y).unwrap();
    let rep = model.report();
    assert!(rep.final_lml >= rep.initial_lml);
    assert!(rep.final_lml.is_finite());
}

#[test]
fn pure_noise_recovers_noise_variance() {
    let generating: f64 = 2.0;
    let mut ratios: Vec<f64> = (0..10)
        .map(|seed| {
            let mut r = common::rng(100 + seed);
            let x = common::normal(&mut r, 30, 2);
            let y = common::normal(&mut r, 30, 12) * generating.sqrt();
            let mut config = ModelConfig::new(4);
            let init = ModelParams {
                theta_c: KernelParams::new(vec![-5.0, -5.0, 0.0, -5.0]),
                theta_r: KernelParams::new(vec![-5.0, -5.0, 0.0, -5.0]),
                log_sigma2: 0.0,
            };
            config.init = Some(init);
            fit(&config, &x, &y).unwrap().sigma2() / generating
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    let median = 0.5 * (ratios[4] + ratios[5]);
    assert!((0.5..=2.0).contains(&median), "median ratio {median}");
}

#[test]
fn refit_is_bit_identical() {
    let mut r = common::rng(7);
    let x = common::normal(&mut r, 15, 3);
    let y = common::normal(&mut r, 15, 9);
    let config = ModelConfig::new(3);
    let a = fit(&config, &x, &y).unwrap();
    let b = fit(&config, &x, &y).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(a.final_lml().to_bits(), b.final_lml().to_bits());
}

#[test]
fn fit_rejects_bad_inputs() {
    let x = DMatrix::zeros(1, 2);
    let y = DMatrix::zeros(1, 3);
    assert!(fit(&ModelConfig::new(1), &x, &y).is_err());
    let mut r = common::rng(8);
    let x = common::normal(&mut r, 5, 2);
    let mut y = common::normal(&mut r, 5, 3);
    assert!(fit(&ModelConfig::new(0), &x, &y).is_err());
    y[(0, 0)] = f64::NAN;
    assert!(fit(&ModelConfig::new(1), &x, &y).is_err());
}

#[test]
fn single_task_lml_matches_dense_gp() {
    let mut r = common::rng(11);
    let spec = KernelSpec::linear_se();
    for _ in 0..5 {
        let x = common::normal(&mut r, 7, 2);
        let y = common::normal(&mut r, 7, 1);
        let raw = common::uniform_vec(&mut r, 4, -1.0, 1.0);
        let params = KernelParams::new(raw[..3].to_vec());
        let k = eval_kernel(&spec, &params, &x, &x).unwrap();
        let dense = dense_lml(&DMatrix::identity(1, 1), &k, raw[3].exp(), &y).unwrap();
        let got = single_task_lml(&spec, &raw, &x, &y.column(0).clone_owned()).unwrap();
        assert!(common::rel_err(got, dense) < 1e-10);

        let g = single_task_gradient(&spec, &raw, &x, &y.column(0).clone_owned()).unwrap();
        for i in 0..4 {
            let mut p = raw.clone();
            let mut m = raw.clone();
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let yc: DVector<f64> = y.column(0).clone_owned();
            let fd = (single_task_lml(&spec, &p, &x, &yc).unwrap() - single_task_lml(&spec, &m, &x, &yc).unwrap()) / 2e-6;
            assert!((g[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0));
        }
    }
}

#[test]
fn single_task_fit_of_one_column_matches_dense_gp() {
    let mut r = common::rng(12);
    let x = common::normal(&mut r, 20, 2);
    let mut y = common::normal(&mut r, 20, 1);
    y += x.columns(0, 1) * 2.0;
    let model = stgpr_fit(&StgprConfig::default(), &x, &y).unwrap();
    let fit = model.tasks()[0].fit().unwrap();
    let k = eval_kernel(&KernelSpec::linear_se(), &fit.kernel_params, &x, &x).unwrap();
    let dense = dense_lml(&DMatrix::identity(1, 1), &k, fit.log_sigma2.exp(), &y).unwrap();
    assert!(common::rel_err(fit.lml, dense) < 1e-8);
}

#[test]
fn duplicated_columns_fit_identically() {
    let mut r = common::rng(13);
    let x = common::normal(&mut r, 15, 2);
    let c = common::normal(&mut r, 15, 1);
    let y = DMatrix::from_fn(15, 3, |i, j| if j < 2 { c[(i, 0)] } else { -c[(i, 0)] * 0.5 });
    let model = stgpr_fit(&StgprConfig::default(), &x, &y).unwrap();
    assert_eq!(model.tasks()[0], model.tasks()[1]);
    assert_eq!(model.parameter_count(), 12);
}

#[test]
fn single_task_prediction_matches_dense_posterior() {
    let mut r = common::rng(14);
    let x = common::normal(&mut r, 12, 2);
    let y = common::normal(&mut r, 12, 3);
    let xs = common::normal(&mut r, 5, 2);
    let model = stgpr_fit(&StgprConfig::default(), &x, &y).unwrap();
    let pred = model.predict(&xs).unwrap();
    let spec = KernelSpec::linear_se();
    for (t, outcome) in model.tasks().iter().enumerate() {
        let f = outcome.fit().unwrap();
        let s2 = f.log_sigma2.exp();
        let k = eval_kernel(&spec, &f.kernel_params, &x, &x).unwrap() + DMatrix::identity(12, 12) * s2;
        let ks = cross_kernel(&spec, &f.kernel_params, &xs, &x).unwrap();
        let kinv = k.try_inverse().unwrap();
        let mean = &ks * &kinv * y.column(t);
        let kss = gram_diag(&spec, &f.kernel_params, &xs).unwrap();
        let reduce = &ks * &kinv * ks.transpose();
        for a in 0..5 {
            assert!((pred.mean[(a, t)] - mean[a]).abs() <= 1e-8 * mean.amax().max(1.0));
            let v = kss[a] - reduce[(a, a)];
            assert!((pred.variance_diag[(a, t)] - v).abs() <= 1e-8 * kss[a].max(1.0));
            assert!(pred.variance_diag[(a, t)] >= 0.0);
        }
        assert_eq!(pred.noise_variance.at(t), s2);
    }
}

#[test]
fn single_task_interpolates_without_noise() {
    let mut r = common::rng(15);
    let x = common::normal(&mut r, 10, 2);
    let y = common::normal(&mut r, 10, 2);
    let config = StgprConfig {
        init: Some(vec![0.0, 0.0, 0.0, (1e-10_f64).ln()]),
        optimizer: smtgpr::optim::LbfgsSettings {
            max_iterations: 0,
            ..Default::default()
        },
        ..Default::default()
    };
    let pred = stgpr_fit(&config, &x, &y).unwrap().predict(&x).unwrap();
    assert!((&pred.mean - &y).amax() < 1e-4);
}

#[test]
fn full_kronecker_scalar_case() {
    let spec = KernelSpec::new(vec![KernelTerm::Linear]).unwrap();
    let config = MtKronprodConfig {
        sample_kernel: spec.clone(),
        task_kernel: spec,
        ..Default::default()
    };
    let params = ModelParams {
        theta_c: KernelParams::new(vec![0.3]),
        theta_r: KernelParams::new(vec![-0.2]),
        log_sigma2: -0.5,
    };
    let x = DMatrix::from_element(1, 1, 1.4);
    let y = DMatrix::from_element(1, 1, 0.8);
    let k = 0.3_f64.exp() * (-0.2_f64).exp() * 1.96 + (-0.5_f64).exp();
    let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * k.ln() - 0.32 / k;
    let got = mtkronprod_lml(&config, &DMatrix::identity(1, 1), &params, &x, &y).unwrap();
    assert!((got - expected).abs() < 1e-14);
}

#[test]
fn full_kronecker_fit_and_guard() {
    let mut r = common::rng(16);
    let x = common::normal(&mut r, 12, 2);
    let y = common::normal(&mut r, 12, 6);
    let model = mtkronprod_fit(&MtKronprodConfig::default(), &x, &y).unwrap();
    assert!(model.report().final_lml >= model.report().initial_lml);
    assert_eq!(model.parameter_count(), 9);
    let pred = model.predict(&x).unwrap();
    assert!(pred.variance_diag.iter().all(|&v| v >= 0.0));

    let guarded = MtKronprodConfig {
        max_tasks: 5,
        ..Default::default()
    };
    assert!(mtkronprod_fit(&guarded, &x, &y).is_err());
}

#[test]
fn parameter_counts_follow_kernel_layout() {
    assert_eq!(ModelConfig::new(10).parameter_count(), 10);
    assert_eq!(MtKronprodConfig::default().parameter_count(), 9);
    assert_eq!(StgprConfig::default().parameter_count(5438), 21752);
}

#[test]
fn stgpr_isolates_failed_tasks() {
    let mut r = common::rng(19);
    let x = common::normal(&mut r, 10, 2);
    let mut y = common::normal(&mut r, 10, 3);
    y[(2, 1)] = f64::INFINITY;
    let model = stgpr_fit(&StgprConfig::default(), &x, &y).unwrap();
    assert_eq!(model.failed_tasks(), 1);
    let pred = model.predict(&x).unwrap();
    assert!(pred.mean.column(1).iter().all(|v| v.is_nan()));
    assert!(pred.mean.column(0).iter().all(|v| v.is_finite()));
}
