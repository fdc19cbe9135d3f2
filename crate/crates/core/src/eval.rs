//! Regression metrics, seeded fold assignment, cross-validation and residuals.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{self, ForestConfig, ForestError};
use crate::matrix::FeatureMatrix;
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} targets vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("target has zero variance")]
    ZeroVariance,
    #[error("k = {k} is invalid for n = {n} (need 2 <= k <= n)")]
    BadK { n: usize, k: usize },
    #[error("hold-out fraction {0} leaves an empty side")]
    BadFraction(f64),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

fn check(y: &[f64], y_hat: &[f64]) -> Result<(), EvalError> {
    if y.len() != y_hat.len() {
        return Err(EvalError::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64, EvalError> {
    check(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64, EvalError> {
    check(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

fn total_sum_of_squares(y: &[f64]) -> Result<f64, EvalError> {
    let m = mean(y);
    let ss: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    if ss == 0.0 {
        Err(EvalError::ZeroVariance)
    } else {
        Ok(ss)
    }
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r2(y: &[f64], y_hat: &[f64]) -> Result<f64, EvalError> {
    check(y, y_hat)?;
    let ss_tot = total_sum_of_squares(y)?;
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Explained variance, `1 - Var(y - ŷ) / Var(y)` with population variances.
pub fn evs(y: &[f64], y_hat: &[f64]) -> Result<f64, EvalError> {
    check(y, y_hat)?;
    let ss_tot = total_sum_of_squares(y)?;
    let resid: Vec<f64> = y.iter().zip(y_hat).map(|(a, b)| a - b).collect();
    let m = mean(&resid);
    let ss_centered: f64 = resid.iter().map(|r| (r - m).powi(2)).sum();
    let ss_raw: f64 = resid.iter().map(|r| r * r).sum();
    // centering can only shrink the sum; keep rounding from breaking EVS >= R²
    Ok(1.0 - ss_centered.min(ss_raw) / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub r2: f64,
    pub evs: f64,
}

impl Metrics {
    pub fn compute(y: &[f64], y_hat: &[f64]) -> Result<Self, EvalError> {
        Ok(Self {
            mse: mse(y, y_hat)?,
            mae: mae(y, y_hat)?,
            r2: r2(y, y_hat)?,
            evs: evs(y, y_hat)?,
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "mse" => Some(self.mse),
            "mae" => Some(self.mae),
            "r2" => Some(self.r2),
            "evs" => Some(self.evs),
            _ => None,
        }
    }

    pub const NAMES: [&'static str; 4] = ["mse", "mae", "r2", "evs"];

    fn map(items: &[Metrics], f: impl Fn(&[f64]) -> f64) -> Metrics {
        let pick = |g: fn(&Metrics) -> f64| f(&items.iter().map(g).collect::<Vec<_>>());
        Metrics {
            mse: pick(|m| m.mse),
            mae: pick(|m| m.mae),
            r2: pick(|m| m.r2),
            evs: pick(|m| m.evs),
        }
    }
}

/// Fold index per row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }
}

/// Shuffles `0..n` with SplitMix64(`seed`) Fisher–Yates and deals the result
/// into `k` contiguous chunks; the first `n mod k` folds get one extra row.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    if k < 2 || k > n {
        return Err(EvalError::BadK { n, k });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut perm);
    let (base, extra) = (n / k, n % k);
    let mut fold_of = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &perm[pos..pos + size] {
            fold_of[i] = fold;
        }
        pos += size;
    }
    Ok(FoldAssignment { k, fold_of })
}

/// Seeded shuffle split: `(train, test)` with `round(n * test_fraction)` test rows.
pub fn holdout_split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    let n_test = (n as f64 * test_fraction).round() as usize;
    if !(0.0..1.0).contains(&test_fraction) || n_test == 0 || n_test >= n {
        return Err(EvalError::BadFraction(test_fraction));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut perm);
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub k: usize,
    pub per_fold: Vec<Metrics>,
    pub mean: Metrics,
    /// Population standard deviation across folds.
    pub std: Metrics,
}

impl CvResult {
    pub fn from_folds(per_fold: Vec<Metrics>) -> Self {
        let mean = Metrics::map(&per_fold, |v| v.iter().sum::<f64>() / v.len() as f64);
        let std = Metrics::map(&per_fold, |v| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
        });
        Self {
            k: per_fold.len(),
            per_fold,
            mean,
            std,
        }
    }
}

/// Targets and predictions of one evaluated fold, in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPredictions {
    pub rows: Vec<usize>,
    pub y: Vec<f64>,
    pub y_hat: Vec<f64>,
}

/// Runs `fit_predict(train_rows, test_rows)` for every fold of `folds`.
pub fn run_folds<E, F>(folds: &FoldAssignment, mut fit_predict: F) -> Result<Vec<FoldPredictions>, E>
where
    F: FnMut(&[usize], &[usize]) -> Result<FoldPredictions, E>,
{
    (0..folds.k)
        .map(|f| fit_predict(&folds.train_indices(f), &folds.test_indices(f)))
        .collect()
}

/// K-fold cross-validation of a forest on an already-assembled matrix.
pub fn cross_validate(
    matrix: &FeatureMatrix,
    config: &ForestConfig,
    k: usize,
    seed: u64,
) -> Result<CvResult, EvalError> {
    let folds = kfold_indices(matrix.n_rows(), k, seed)?;
    let preds = run_folds(&folds, |train, test| -> Result<_, EvalError> {
        let model = forest::fit(&matrix.select_rows(train), config)?;
        let test_m = matrix.select_rows(test);
        Ok(FoldPredictions {
            rows: test.to_vec(),
            y: test_m.target().to_vec(),
            y_hat: model.predict_matrix(&test_m)?,
        })
    })?;
    let per_fold = preds
        .iter()
        .map(|p| Metrics::compute(&p.y, &p.y_hat))
        .collect::<Result<_, _>>()?;
    Ok(CvResult::from_folds(per_fold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub index: usize,
    pub y: f64,
    pub y_hat: f64,
    pub residual: f64,
}

pub fn residuals(y: &[f64], y_hat: &[f64]) -> Result<Vec<ResidualRecord>, EvalError> {
    if y.len() != y_hat.len() {
        return Err(EvalError::LengthMismatch(y.len(), y_hat.len()));
    }
    Ok(y.iter()
        .zip(y_hat)
        .enumerate()
        .map(|(index, (&y, &y_hat))| ResidualRecord {
            index,
            y,
            y_hat,
            residual: y - y_hat,
        })
        .collect())
}

pub fn write_residuals<W: io::Write>(records: &[ResidualRecord], writer: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", "y", "y_hat", "residual"])?;
    for r in records {
        w.write_record([
            r.index.to_string(),
            r.y.to_string(),
            r.y_hat.to_string(),
            r.residual.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `index,y,y_hat,residual` CSV.
pub fn export_residuals(records: &[ResidualRecord], path: &Path) -> Result<(), EvalError> {
    write_residuals(records, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(mse(&[0., 0.], &[1., 1.]).unwrap(), 1.0);
        assert_eq!(mae(&[0., 0.], &[1., 1.]).unwrap(), 1.0);
        assert!((mse(&y, &[2., 2., 2.]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((mae(&y, &[2., 2., 2.]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(evs(&y, &y).unwrap(), 1.0);
        assert_eq!(r2(&y, &[2., 2., 2.]).unwrap(), 0.0);
        // SS_res = 3, SS_tot = 2, residuals constant
        assert_eq!(r2(&y, &[2., 3., 4.]).unwrap(), -0.5);
        assert_eq!(evs(&y, &[2., 3., 4.]).unwrap(), 1.0);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch(1, 2))));
        assert!(matches!(mae(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(r2(&[2., 2.], &[1., 2.]), Err(EvalError::ZeroVariance)));
        assert!(matches!(evs(&[2., 2.], &[1., 2.]), Err(EvalError::ZeroVariance)));
    }

    #[test]
    fn fold_sizes() {
        assert_eq!(kfold_indices(10, 5, 1).unwrap().sizes(), vec![2; 5]);
        assert_eq!(kfold_indices(7, 3, 1).unwrap().sizes(), vec![3, 2, 2]);
        assert_eq!(kfold_indices(7, 3, 9).unwrap(), kfold_indices(7, 3, 9).unwrap());
        assert!(matches!(kfold_indices(3, 4, 0), Err(EvalError::BadK { .. })));
        assert!(matches!(kfold_indices(3, 1, 0), Err(EvalError::BadK { .. })));
    }

    #[test]
    fn holdout_sizes() {
        let (train, test) = holdout_split(1000, 0.2, 42).unwrap();
        assert_eq!((train.len(), test.len()), (800, 200));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert!(holdout_split(3, 0.0, 1).is_err());
        assert!(holdout_split(3, 0.99, 1).is_err());
    }

    #[test]
    fn leave_one_out_runs() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| (i % 4) as f64).collect();
        let m = FeatureMatrix::from_rows(&rows, y);
        let cfg = ForestConfig { n_estimators: 3, ..Default::default() };
        let folds = kfold_indices(10, 10, 0).unwrap();
        let preds = run_folds(&folds, |train, test| -> Result<_, EvalError> {
            let model = forest::fit(&m.select_rows(train), &cfg)?;
            let t = m.select_rows(test);
            Ok(FoldPredictions { rows: test.to_vec(), y: t.target().to_vec(), y_hat: model.predict_matrix(&t)? })
        })
        .unwrap();
        assert_eq!(preds.len(), 10);
        assert!(preds.iter().all(|p| p.rows.len() == 1));
    }

    #[test]
    fn residual_export() {
        let recs = residuals(&[1., 2.], &[1., 1.]).unwrap();
        assert_eq!(recs.iter().map(|r| r.residual).collect::<Vec<_>>(), vec![0., 1.]);
        let mut buf = Vec::new();
        write_residuals(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap(), "index,y,y_hat,residual");
        let perfect = residuals(&[1., 5., 9.], &[1., 5., 9.]).unwrap();
        assert_eq!(perfect.iter().map(|r| r.residual).sum::<f64>(), 0.0);
    }

    #[test]
    fn cv_std_is_population() {
        let m = |v: f64| Metrics { mse: v, mae: v, r2: v, evs: v };
        let cv = CvResult::from_folds(vec![m(1.0), m(3.0)]);
        assert_eq!(cv.mean.mse, 2.0);
        assert_eq!(cv.std.mse, 1.0);
    }

    proptest! {
        #[test]
        fn folds_partition(n in 2usize..300, k in 2usize..12, seed: u64) {
            prop_assume!(k <= n);
            let a = kfold_indices(n, k, seed).unwrap();
            let sizes = a.sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert!(a.fold_of.iter().all(|&f| f < k));
        }

        #[test]
        fn metric_identities(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..60)) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y_hat: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let m = Metrics::compute(&y, &y_hat).unwrap();
            prop_assert!(m.evs >= m.r2 - 1e-12);
            prop_assert!(m.mae <= m.mse.sqrt() + 1e-12);
            prop_assert!(m.mse >= 0.0 && m.r2 <= 1.0 && m.evs <= 1.0);
        }
    }
}
