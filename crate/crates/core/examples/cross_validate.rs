//! Hold-out and k-fold validation of the baseline method on the bundled
//! table. Preprocessing is refit on each fold's training rows.
//!
//!     cargo run --release --example cross_validate

use std::path::PathBuf;

use dmv::eval::{self, Metrics};
use dmv::experiment::{Experiment, Method, Protocol};
use dmv::forest::ForestConfig;
use dmv::ingest::{self, ColumnSchema};
use dmv::preprocess::PrepConfig;

fn show(label: &str, m: &Metrics) {
    println!("{label:>8}: mse {:.4}  mae {:.4}  r2 {:.4}  evs {:.4}", m.mse, m.mae, m.r2, m.evs);
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let table = ingest::load_csv(&dir.join("data/synthetic_cdc.csv"), &ColumnSchema::cdc_default())?;
    let forest = ForestConfig {
        n_estimators: 50,
        ..ForestConfig::default()
    };
    let exp = Experiment::new(&table, PrepConfig::default(), forest, 0.2, 42);
    let baseline = Method::baseline();

    let holdout = exp.evaluate(&baseline, Protocol::Holdout, &[])?;
    show("holdout", &holdout.summary());

    let cv = exp.evaluate(&baseline, Protocol::KFold(5), &[])?.cv();
    for (i, m) in cv.per_fold.iter().enumerate() {
        show(&format!("fold {i}"), m);
    }
    show("mean", &cv.mean);
    show("std", &cv.std);

    let folds = eval::kfold_indices(table.labelled_rows().len(), 5, 42)?;
    println!("fold sizes {:?}", folds.sizes());

    let fold = &holdout.folds[0];
    let residuals = eval::residuals(&fold.y, &fold.y_hat)?;
    let worst = residuals.iter().max_by(|a, b| a.residual.abs().total_cmp(&b.residual.abs())).unwrap();
    println!("largest hold-out residual {:.2} (y {:.1}, predicted {:.2})", worst.residual, worst.y, worst.y_hat);
    Ok(())
}
