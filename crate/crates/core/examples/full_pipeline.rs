//! Every stage against the bundled config: ingest, preprocess, embed,
//! train, evaluate and ablate, with artifacts written to a scratch
//! directory. Equivalent to `dmv run --config data/dmv.toml --out DIR`.
//!
//!     cargo run --release --example full_pipeline [-- OUT_DIR]

use std::path::PathBuf;

use dmv::config::{Overrides, RunConfig};
use dmv::pipeline::Pipeline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dmv-example-run"));

    let mut config = RunConfig::load(&dir.join("data/dmv.toml"))?;
    config.apply(&Overrides {
        out: Some(out.clone()),
        ..Overrides::default()
    });
    let pipeline = Pipeline::new(config)?;
    let report = pipeline.run()?;

    println!("primary method: {}", report.primary_method);
    for (method, m) in &report.holdout.metrics {
        println!("{method:>12} hold-out: r2 {:.4}, mse {:.4}", m.r2, m.mse);
    }
    for (method, per_k) in &report.cross_validation {
        for (k, cv) in per_k {
            println!("{method:>12} {k}: r2 {:.4} +/- {:.4}", cv.mean.r2, cv.std.r2);
        }
    }
    if let Some(ablation) = &report.ablation {
        for c in &ablation.cells {
            println!(
                "{:>12} {} without {}: mse {:+.2}%",
                c.method,
                c.protocol,
                c.group,
                c.change_pct["mse"].unwrap_or(f64::NAN)
            );
        }
    }
    for (stage, secs) in &report.wallclock.stage_seconds {
        println!("{stage:>12}: {secs:.1}s");
    }
    println!("{} artifacts in {}", report.artifacts.len(), out.display());
    Ok(())
}
