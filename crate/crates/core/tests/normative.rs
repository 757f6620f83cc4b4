mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use smtgpr::normative::{
    abnormality_probability, abnormality_score, auc, compute_npm, fit_gevd, gev_cdf, r_squared, NpmMatrix,
    RobustMean,
};
use smtgpr::{NoiseVariance, PredictiveDistribution};

fn brute_auc(normal: &[f64], abnormal: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in abnormal {
        for &n in normal {
            wins += if a > n {
                1.0
            } else if a == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (normal.len() * abnormal.len()) as f64
}

fn brute_score(row: &[f64], fraction: f64) -> f64 {
    let mut mags: Vec<f64> = row.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let k = (fraction * row.len() as f64 - 1e-9).ceil() as usize;
    let mut top = mags[..k].to_vec();
    top.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let g = (0.1 * k as f64 + 1e-9).floor() as usize;
    let kept = &top[g..k - g];
    kept.iter().sum::<f64>() / kept.len() as f64
}

#[test]
fn auc_matches_pairwise_count() {
    let mut r = common::rng(1);
    for case in 0..100 {
        let n = r.random_range(1..30);
        let m = r.random_range(1..30);
        // Coarse rounding produces ties.
        let normal: Vec<f64> = (0..n).map(|_| (r.random::<f64>() * 10.0).round()).collect();
        let abnormal: Vec<f64> = (0..m).map(|_| (r.random::<f64>() * 12.0).round()).collect();
        let got = auc(&normal, &abnormal).unwrap();
        assert!((got - brute_auc(&normal, &abnormal)).abs() <= 1e-12, "case {case}");
    }
}

#[test]
fn r_squared_matches_formula() {
    let mut r = common::rng(2);
    for _ in 0..100 {
        let n = r.random_range(2..15);
        let t = r.random_range(1..6);
        let y = common::normal(&mut r, n, t);
        let p = common::normal(&mut r, n, t);
        let got = r_squared(&y, &p).unwrap();
        let mut sum = 0.0;
        for j in 0..t {
            let mean = y.column(j).iter().sum::<f64>() / n as f64;
            let sst: f64 = y.column(j).iter().map(|v| (v - mean) * (v - mean)).sum();
            let sse: f64 = (0..n).map(|i| (y[(i, j)] - p[(i, j)]).powi(2)).sum();
            let expected = 1.0 - sse / sst;
            assert!((got.per_task[j] - expected).abs() <= 1e-12);
            sum += expected;
        }
        assert!((got.mean - sum / t as f64).abs() <= 1e-12);
    }
}

#[test]
fn npm_matches_scalar_recomputation() {
    let mut r = common::rng(3);
    let y = common::normal(&mut r, 6, 9);
    let mean = common::normal(&mut r, 6, 9);
    let var = DMatrix::from_fn(6, 9, |_, _| r.random::<f64>() + 0.1);
    let noise: Vec<f64> = (0..9).map(|_| r.random::<f64>() + 0.05).collect();
    let pred = PredictiveDistribution {
        mean: mean.clone(),
        variance_diag: var.clone(),
        noise_variance: NoiseVariance::PerTask(noise.clone()),
    };
    let npm = compute_npm(&y, &pred).unwrap();
    for i in 0..6 {
        for j in 0..9 {
            let z = (y[(i, j)] - mean[(i, j)]) / (var[(i, j)] + noise[j]).sqrt();
            assert_eq!(npm.values[(i, j)], z);
        }
    }
}

#[test]
fn score_matches_sort_select_trim() {
    let mut r = common::rng(4);
    for _ in 0..50 {
        let t = r.random_range(20..200);
        let fraction = [0.05, 0.1, 0.25, 0.5][r.random_range(0..4)];
        let values = common::normal(&mut r, 3, t);
        let scores = abnormality_score(&NpmMatrix { values: values.clone() }, fraction, RobustMean::default()).unwrap();
        for (row, score) in values.row_iter().zip(&scores) {
            let row: Vec<f64> = row.iter().copied().collect();
            assert!((score - brute_score(&row, fraction)).abs() <= 1e-12);
        }
    }
}

#[test]
fn gev_recovers_gumbel_parameters() {
    let mut r = common::rng(5);
    let g = Gumbel::new(0.0, 1.0).unwrap();
    let draws: Vec<f64> = (0..10_000).map(|_| g.sample(&mut r)).collect();
    let fit = fit_gevd(&draws).unwrap();
    assert!(fit.shape.abs() < 0.1, "{fit:?}");
    assert!(fit.location.abs() < 0.1, "{fit:?}");
    assert!((fit.scale - 1.0).abs() < 0.1, "{fit:?}");
    assert_eq!(fit.n_samples, 10_000);
}

#[test]
fn gev_fit_is_affine_equivariant() {
    let mut r = common::rng(6);
    let g = Gumbel::new(1.0, 0.5).unwrap();
    let draws: Vec<f64> = (0..500).map(|_| g.sample(&mut r)).collect();
    let (a, b) = (3.5, -2.0);
    let base = fit_gevd(&draws).unwrap();
    let moved = fit_gevd(&draws.iter().map(|v| a * v + b).collect::<Vec<_>>()).unwrap();
    assert!((moved.shape - base.shape).abs() < 1e-3);
    assert!((moved.location - (a * base.location + b)).abs() < 1e-3 * a);
    assert!((moved.scale - a * base.scale).abs() < 1e-3 * a);
}

#[test]
fn gev_fit_is_deterministic() {
    let mut r = common::rng(7);
    let draws: Vec<f64> = (0..200).map(|_| r.random::<f64>().powi(2)).collect();
    assert_eq!(fit_gevd(&draws).unwrap(), fit_gevd(&draws).unwrap());
}

#[test]
fn probability_ranking_preserves_auc() {
    let mut r = common::rng(8);
    let g = Gumbel::new(0.0, 1.0).unwrap();
    let normal: Vec<f64> = (0..60).map(|_| g.sample(&mut r)).collect();
    let abnormal: Vec<f64> = (0..40).map(|_| g.sample(&mut r) + 0.8).collect();
    let fit = fit_gevd(&normal).unwrap();
    let prob = |v: &[f64]| v.iter().map(|&s| abnormality_probability(&fit, s)).collect::<Vec<_>>();
    assert_eq!(auc(&normal, &abnormal).unwrap(), auc(&prob(&normal), &prob(&abnormal)).unwrap());
}

proptest! {
    #[test]
    fn score_ignores_signs(seed in any::<u64>(), flips in proptest::collection::vec(any::<bool>(), 40)) {
        let values = common::normal(&mut common::rng(seed), 2, 40);
        let flipped = DMatrix::from_fn(2, 40, |i, j| if flips[j] { -values[(i, j)] } else { values[(i, j)] });
        let a = abnormality_score(&NpmMatrix { values }, 0.1, RobustMean::default()).unwrap();
        let b = abnormality_score(&NpmMatrix { values: flipped }, 0.1, RobustMean::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn auc_invariant_under_monotone_map(normal in proptest::collection::vec(-5.0f64..5.0, 1..30), abnormal in proptest::collection::vec(-5.0f64..5.0, 1..30)) {
        let f = |v: &Vec<f64>| v.iter().map(|x| x.exp() * 3.0 + 1.0).collect::<Vec<_>>();
        prop_assert_eq!(auc(&normal, &abnormal).unwrap(), auc(&f(&normal), &f(&abnormal)).unwrap());
    }

    #[test]
    fn r_squared_shift_invariant(seed in any::<u64>(), shift in -100.0f64..100.0) {
        let mut r = common::rng(seed);
        let y = common::normal(&mut r, 8, 3);
        let p = common::normal(&mut r, 8, 3);
        let a = r_squared(&y, &p).unwrap();
        let b = r_squared(&y.add_scalar(shift), &p.add_scalar(shift)).unwrap();
        for (u, v) in a.per_task.iter().zip(&b.per_task) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn gev_cdf_is_monotone(xi in -0.8f64..0.8, mu in -3.0f64..3.0, sigma in 0.1f64..3.0, a in -10.0f64..10.0, b in -10.0f64..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (flo, fhi) = (gev_cdf(xi, mu, sigma, lo), gev_cdf(xi, mu, sigma, hi));
        prop_assert!(flo <= fhi);
        prop_assert!((0.0..=1.0).contains(&flo) && (0.0..=1.0).contains(&fhi));
    }
}
