//! Loads the bundled survey table, checks it against the default schema
//! and parses the geolocation column.
//!
//!     cargo run --example ingest_geolocation

use std::path::PathBuf;

use dmv::ingest::{self, ColumnSchema};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_cdc.csv");
    let schema = ColumnSchema::cdc_default();
    let table = ingest::load_csv(&path, &schema)?;
    println!("{} rows x {} columns, {} with a target", table.n_rows(), schema.len(), table.labelled_rows().len());

    let parts = ingest::partition_columns(&table);
    println!("target:      {}", parts.target);
    println!("geolocation: {}", parts.geolocation);
    println!("categorical: {:?}", parts.categorical);
    println!("numerical:   {:?}", parts.numerical);

    // both accepted spellings; WKT is longitude first
    for cell in ["POINT (-120.47 47.52)", "(47.52, -120.47)", "POINT (200 10)"] {
        match ingest::parse_geolocation(cell) {
            Ok(p) => println!("{cell:>24} -> lat {:.2}, lon {:.2}", p.latitude, p.longitude),
            Err(e) => println!("{cell:>24} -> {e}"),
        }
    }

    let (lat, _) = dmv::preprocess::geolocation_columns(&table)?;
    let known: Vec<f64> = lat.into_iter().flatten().collect();
    let (lo, hi) = known.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("latitude range {lo:.2}..{hi:.2} over {} located records", known.len());

    for (column, rate) in table.missing_rates().iter().filter(|(_, r)| *r > 0.0) {
        println!("missing {column}: {:.1}%", 100.0 * rate);
    }
    Ok(())
}
