use smtgpr_harness::config::Method;
use smtgpr_harness::experiment::{
    finite_mean, finite_sd, read_report_csv, write_report, Aggregate, Repetition,
};
use smtgpr_harness::{run_experiment, DataSource, ExperimentConfig, ReportRow, SyntheticSpec};

fn tiny() -> ExperimentConfig {
    ExperimentConfig {
        seed: 11,
        repetitions: 2,
        p_grid: vec![3, 5, 100],
        data: DataSource::Synthetic(SyntheticSpec {
            n_train: 20,
            n_test_normal: 10,
            n_test_abnormal: 10,
            n_tasks: 30,
            n_features: 3,
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn without_timing(rows: &[ReportRow]) -> Vec<ReportRow> {
    rows.iter()
        .map(|r| ReportRow {
            optimization_seconds: 0.0,
            prediction_seconds: 0.0,
            ..r.clone()
        })
        .collect()
}

#[test]
fn report_layout_determinism_and_aggregates() {
    let config = tiny();
    let rows = run_experiment(&config).unwrap();

    // Two repetitions of STGPR, MT-Kronprod and S-MTGPR at P = 3 and 5
    // (P = 100 exceeds min(N, T) and is skipped), then a mean and an sd row
    // per group.
    let per_rep: Vec<&ReportRow> = rows.iter().filter(|r| matches!(r.repetition, Repetition::Index(_))).collect();
    assert_eq!(per_rep.len(), 2 * 4);
    assert_eq!(rows.len(), 2 * 4 + 2 * 4);
    assert!(rows.iter().all(|r| r.p != Some(100)));
    assert!(per_rep.iter().all(|r| r.warnings.is_empty() || !r.warnings.starts_with("failed")));
    for r in &per_rep {
        assert!(r.auc.is_finite() && r.mean_r2.is_finite() && r.final_lml.is_finite());
        let expected = match r.method {
            Method::Smtgpr => 10,
            Method::MtKronprod => 9,
            Method::Stgpr => 4 * 30,
        };
        assert_eq!(r.parameter_count, expected);
    }

    for agg in rows.iter().filter(|r| matches!(r.repetition, Repetition::Aggregate(_))) {
        let members: Vec<f64> = per_rep
            .iter()
            .filter(|r| r.method == agg.method && r.p == agg.p)
            .map(|r| r.auc)
            .collect();
        assert_eq!(members.len(), 2);
        let expect = match agg.repetition {
            Repetition::Aggregate(Aggregate::Mean) => finite_mean(&members),
            Repetition::Aggregate(Aggregate::Sd) => finite_sd(&members),
            Repetition::Index(_) => unreachable!(),
        };
        assert_eq!(agg.auc.to_bits(), expect.to_bits());
    }

    let again = run_experiment(&config).unwrap();
    assert_eq!(without_timing(&rows), without_timing(&again));

    let dir = tempfile::tempdir().unwrap();
    let (csv, jsonl) = write_report(&rows, &dir.path().join("report")).unwrap();
    assert_eq!(std::fs::read_to_string(&jsonl).unwrap().lines().count(), rows.len());
    let back = read_report_csv(&csv).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in back.iter().zip(&rows) {
        assert_eq!((a.method, a.p, a.repetition), (b.method, b.p, b.repetition));
        assert_eq!(a.auc.to_bits(), b.auc.to_bits());
    }
}

#[test]
fn seed_changes_results() {
    let mut a = tiny();
    a.methods = vec![Method::Smtgpr];
    a.repetitions = 1;
    let mut b = a.clone();
    b.seed = 12;
    let ra = run_experiment(&a).unwrap();
    let rb = run_experiment(&b).unwrap();
    assert_ne!(ra[0].final_lml, rb[0].final_lml);
}

#[test]
fn aggregate_helpers_ignore_non_finite_entries() {
    assert_eq!(finite_mean(&[1.0, f64::NAN, 3.0]), 2.0);
    assert!(finite_mean(&[f64::NAN]).is_nan());
    assert!((finite_sd(&[1.0, 3.0, f64::INFINITY]) - 2f64.sqrt()).abs() < 1e-15);
    assert!(finite_sd(&[1.0]).is_nan());
}
