//! Paired with/without-geolocation comparison for the baseline and the
//! local-embedding method, plus the percent-change arithmetic.
//!
//!     cargo run --release --example geolocation_ablation

use std::path::PathBuf;

use dmv::ablation::{self, percent_change, round2, AblationSpec};
use dmv::embed;
use dmv::experiment::{Method, Protocol};
use dmv::forest::ForestConfig;
use dmv::ingest::{self, ColumnSchema};
use dmv::preprocess::PrepConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let table = ingest::load_csv(&dir.join("data/synthetic_cdc.csv"), &ColumnSchema::cdc_default())?;

    let columns: Vec<String> = embed::DEFAULT_TEXT_COLUMNS.iter().map(|s| s.to_string()).collect();
    let vectors: Vec<Vec<f64>> = (0..table.n_rows())
        .map(|r| embed::embed_local(&embed::build_text(&table, r, &columns), 32, 42))
        .collect();
    let methods = vec![Method::baseline(), Method::with_embeddings("local-embed", vectors)];

    let spec = AblationSpec::geolocation(methods, vec![Protocol::Holdout, Protocol::KFold(5)]);
    let forest = ForestConfig {
        n_estimators: 50,
        ..ForestConfig::default()
    };
    let result = ablation::run_ablation(&table, &spec, &PrepConfig::default(), &forest, 0.2, 42)?;

    println!("{:<12} {:<8} {:>10} {:>10} {:>9}", "method", "protocol", "mse with", "without", "change");
    for c in &result.cells {
        let change = c.change_pct_rounded["mse"].map_or("n/a".to_string(), |v| format!("{v:+.2}%"));
        println!(
            "{:<12} {:<8} {:>10.4} {:>10.4} {:>9}",
            c.method, c.protocol, c.metrics_with.mse, c.metrics_without.mse, change
        );
    }

    // positive means the metric grew once the group was removed
    println!("change(0.0221 -> 0.0239) = {:+.2}%", round2(percent_change(0.0221, 0.0239)?));
    println!("change(0.9781 -> 0.9762) = {:+.2}%", round2(percent_change(0.9781, 0.9762)?));
    println!("change(0 -> 1) = {:?}", percent_change(0.0, 1.0).map_err(|e| e.to_string()));

    print!("{}", result.to_csv().lines().take(5).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}
