//! Fits imputation, redundancy filtering, feature selection, one-hot
//! encoding and scaling on a training split, then builds feature matrices.
//!
//!     cargo run --release --example preprocess_features

use std::path::PathBuf;

use dmv::eval;
use dmv::ingest::{self, ColumnSchema};
use dmv::preprocess::{self, PrepConfig, PrepState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let table = ingest::load_csv(&dir.join("data/synthetic_cdc.csv"), &ColumnSchema::cdc_default())?;
    let (train, test) = eval::holdout_split(table.n_rows(), 0.2, 42)?;

    let config = PrepConfig::default();
    let state = PrepState::fit(&table, &train, &config)?;
    for (dropped, kept) in &state.redundant {
        println!("redundant: {dropped} (duplicates {kept})");
    }
    for (method, scores) in &state.scores {
        let mut ranked: Vec<_> = scores.iter().collect();
        ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        let top: Vec<String> = ranked.iter().take(4).map(|(c, s)| format!("{c}={s:.3}")).collect();
        println!("{method:>10}: {}", top.join(", "));
    }
    println!("selected: {:?}", state.selected);

    let x_train = preprocess::assemble_matrix(&table, &train, &state, None, true)?;
    let x_test = state.transform(&table, &test, None, true)?;
    let no_geo = state.transform(&table, &test, None, false)?;
    println!("train {} x {}, test {} x {}", x_train.n_rows(), x_train.n_cols(), x_test.n_rows(), x_test.n_cols());
    println!("without geolocation: {} columns", no_geo.n_cols());
    println!("first columns: {:?}", &x_train.column_names()[..6.min(x_train.n_cols())]);

    // the fitted state round-trips through its binary file
    let path = std::env::temp_dir().join("dmv-example-prep.dmvp");
    std::fs::write(&path, state.to_bytes())?;
    assert_eq!(PrepState::load(&path)?, state);
    println!("state saved to {}", path.display());

    // building blocks on their own
    println!("pearson([1,2,3,4], [1,3,2,4]) = {:.1}", preprocess::pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0])?);
    let labels = ["lo", "lo", "hi", "hi"];
    println!("MI(perfect, 2 bins) = {:.4}", preprocess::mutual_information(&labels, &[1.0, 2.0, 3.0, 4.0], 2));
    Ok(())
}
