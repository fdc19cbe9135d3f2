mod common;

use common::*;
use dmv::eval::{self, EvalError, Metrics};
use dmv::forest::ForestConfig;
use dmv::matrix::FeatureMatrix;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn metrics_match_oracles() {
    check_metrics(21, 100).unwrap();
}

#[test]
fn worked_metric_examples() {
    let m = Metrics::compute(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
    assert!((m.mse - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.mae - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(m.r2, 0.0);

    let offset = Metrics::compute(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
    assert!((offset.evs - 1.0).abs() < 1e-15);
    assert!((offset.r2 + 0.5).abs() < 1e-15);

    assert!(matches!(
        Metrics::compute(&[1.0, 2.0], &[1.0]),
        Err(EvalError::LengthMismatch(2, 1))
    ));
}

#[test]
fn kfold_partitions() {
    for n in [10, 1000, 10000] {
        for k in [5, 10] {
            check_kfold(n, k, 42).unwrap();
        }
    }
    let small = eval::kfold_indices(7, 3, 1).unwrap();
    assert_eq!(small.sizes(), vec![3, 2, 2]);
    check_kfold(10, 10, 3).unwrap();
    assert!(eval::kfold_indices(10, 11, 0).is_err());
    assert!(eval::kfold_indices(10, 1, 0).is_err());
    assert_ne!(eval::kfold_indices(100, 5, 1).unwrap(), eval::kfold_indices(100, 5, 2).unwrap());
}

#[test]
fn leave_one_out_folds_hold_single_rows() {
    let a = eval::kfold_indices(10, 10, 8).unwrap();
    assert!(a.sizes().iter().all(|&s| s == 1));
}

#[test]
fn holdout_split_is_a_partition() {
    let (train, test) = eval::holdout_split(1000, 0.2, 42).unwrap();
    assert_eq!(test.len(), 200);
    let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..1000).collect::<Vec<_>>());
    assert_eq!(eval::holdout_split(1000, 0.2, 42).unwrap(), (train, test));
}

#[test]
fn cross_validation_recovers_planted_signal() {
    let mut rng = seeded(4);
    let rows: Vec<Vec<f64>> = (0..400)
        .map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| 4.0 * r[0] + 2.0 * r[1]).collect();
    let m = FeatureMatrix::from_rows(&rows, y);
    let cv = eval::cross_validate(&m, &ForestConfig::default(), 5, 42).unwrap();
    assert_eq!(cv.per_fold.len(), 5);
    assert!(cv.mean.r2 >= 0.9, "{:?}", cv.mean);
    let again = eval::cross_validate(&m, &ForestConfig::default(), 5, 42).unwrap();
    assert_eq!(cv, again);
}

#[test]
fn residual_export_has_header_and_one_row_per_prediction() {
    let y = [1.0, 2.5, 3.0, 4.0];
    let p = [1.5, 2.0, 3.0, 5.0];
    let records = eval::residuals(&y, &p).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("residuals.csv");
    eval::export_residuals(&records, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), y.len() + 1);
    assert_eq!(lines[0], "index,y,y_hat,residual");
    assert!(records.iter().all(|r| (r.y - r.y_hat - r.residual).abs() == 0.0));
}

proptest! {
    #[test]
    fn metric_identities(y in prop::collection::vec(-1e3f64..1e3, 2..50), noise in prop::collection::vec(-10f64..10.0, 50)) {
        let p: Vec<f64> = y.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let m = match Metrics::compute(&y, &p) {
            Ok(m) => m,
            Err(EvalError::ZeroVariance) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        prop_assert!(m.mse >= 0.0 && m.mae >= 0.0);
        prop_assert!(m.evs >= m.r2);
        prop_assert!(m.mae <= m.mse.sqrt() * (1.0 + 1e-12));
        prop_assert!(m.r2 <= 1.0);
    }

    #[test]
    fn kfold_invariants(n in 2usize..300, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        prop_assert!(check_kfold(n, k, seed).is_ok());
    }
}
