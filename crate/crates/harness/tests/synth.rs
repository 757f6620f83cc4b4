use nalgebra::DMatrix;
use smtgpr::normative::auc;
use smtgpr_harness::{generate_synthetic, SyntheticSpec};

fn small() -> SyntheticSpec {
    SyntheticSpec {
        n_train: 20,
        n_test_normal: 15,
        n_test_abnormal: 15,
        n_tasks: 40,
        n_features: 4,
        ..Default::default()
    }
}

#[test]
fn same_seed_same_data() {
    let spec = small();
    assert_eq!(generate_synthetic(&spec, 7).unwrap(), generate_synthetic(&spec, 7).unwrap());
    assert_ne!(generate_synthetic(&spec, 7).unwrap().y_train, generate_synthetic(&spec, 8).unwrap().y_train);
}

#[test]
fn shapes_and_label_layout() {
    let spec = small();
    let d = generate_synthetic(&spec, 1).unwrap();
    assert_eq!(d.x_train.shape(), (20, 4));
    assert_eq!(d.y_train.shape(), (20, 40));
    assert_eq!(d.x_test.shape(), (30, 4));
    assert_eq!(d.y_test.shape(), (30, 40));
    assert_eq!(d.labels.iter().filter(|&&l| l).count(), 15);
    assert!(d.labels[..15].iter().all(|&l| !l));
}

#[test]
fn shift_touches_only_abnormal_rows_inside_one_patch() {
    let spec = small();
    let base = generate_synthetic(&SyntheticSpec { shift_magnitude: 0.0, ..spec.clone() }, 3).unwrap();
    let shifted = generate_synthetic(&spec, 3).unwrap();
    assert_eq!(base.x_train, shifted.x_train);
    assert_eq!(base.y_train, shifted.y_train);
    assert_eq!(base.x_test, shifted.x_test);
    let diff = &shifted.y_test - &base.y_test;
    let width = spec.patch_width();
    for (i, &abnormal) in shifted.labels.iter().enumerate() {
        let touched: Vec<usize> = (0..spec.n_tasks).filter(|&t| diff[(i, t)] != 0.0).collect();
        if !abnormal {
            assert!(touched.is_empty());
            continue;
        }
        assert!(!touched.is_empty() && touched.len() <= width);
        assert!(touched.last().unwrap() - touched[0] < width);
        let peak = diff.row(i).amax();
        assert!(peak <= spec.shift_magnitude + 1e-12 && peak > 0.5 * spec.shift_magnitude);
    }
}

#[test]
fn null_arm_scores_are_uninformative() {
    let spec = SyntheticSpec { shift_magnitude: 0.0, ..small() };
    let mut aucs = Vec::new();
    for seed in 0..10 {
        let d = generate_synthetic(&spec, seed).unwrap();
        let score = |i: usize| d.y_test.row(i).amax();
        let (normal, abnormal): (Vec<usize>, Vec<usize>) = (0..d.labels.len()).partition(|&i| !d.labels[i]);
        let normal: Vec<f64> = normal.into_iter().map(score).collect();
        let abnormal: Vec<f64> = abnormal.into_iter().map(score).collect();
        aucs.push(auc(&normal, &abnormal).unwrap());
    }
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    assert!((mean - 0.5).abs() < 0.06, "mean null AUC {mean}");
}

#[test]
fn pooled_response_covariance_matches_task_covariance() {
    // Rows of a single draw share the sample covariance, so independent
    // draws are pooled to estimate E[yᵀy].
    let spec = SyntheticSpec {
        n_train: 5,
        n_test_normal: 1,
        n_test_abnormal: 1,
        n_tasks: 30,
        n_features: 5,
        noise_variance: 0.0,
        ..Default::default()
    };
    let mut acc = DMatrix::<f64>::zeros(30, 30);
    let mut rows = 0;
    for seed in 0..1000 {
        let d = generate_synthetic(&spec, seed).unwrap();
        acc += d.y_train.transpose() * &d.y_train;
        rows += d.y_train.nrows();
    }
    let empirical = acc / rows as f64;
    let expected = spec.task_covariance() * spec.signal_variance;
    let err = (&empirical - &expected).amax();
    assert!(err < 0.1, "max covariance deviation {err}");
}
