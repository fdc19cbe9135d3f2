//! Regenerates the bundled synthetic survey table.
//!
//!     cargo run --example generate_fixture [-- OUTPUT.csv]

use std::path::PathBuf;

use dmv::synth::{generate_csv, SynthConfig};

fn main() -> std::io::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_cdc.csv")
    });
    let config = SynthConfig::default();
    std::fs::write(&out, generate_csv(&config))?;
    println!("wrote {} rows to {}", config.rows, out.display());
    Ok(())
}
