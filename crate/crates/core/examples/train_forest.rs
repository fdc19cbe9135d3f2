//! Random forest regression on a small planted function: fitting,
//! per-tree outputs, importances and the model file.
//!
//!     cargo run --release --example train_forest

use dmv::forest::{self, ForestConfig, MaxFeatures};
use dmv::matrix::FeatureMatrix;
use dmv::rng::SplitMix64;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = SplitMix64::new(3);
    let rows: Vec<Vec<f64>> = (0..500)
        .map(|_| (0..4).map(|_| rng.next_f64()).collect())
        .collect();
    // x0 dominates, x2 matters a little, x1 and x3 are noise
    let y: Vec<f64> = rows
        .iter()
        .map(|r| 10.0 * r[0] + if r[2] > 0.5 { 1.5 } else { 0.0 })
        .collect();
    let data = FeatureMatrix::from_rows(&rows, y);

    let config = ForestConfig {
        n_estimators: 50,
        max_features: MaxFeatures::Sqrt,
        random_state: 7,
        ..ForestConfig::default()
    };
    let model = forest::fit(&data, &config)?;
    let depth = model.trees.iter().map(|t| t.depth()).max().unwrap_or(0);
    println!("{} trees, deepest {depth}", model.trees.len());

    let query = [0.25, 0.9, 0.75, 0.1];
    let per_tree = model.tree_predictions(&query);
    let (lo, hi) = per_tree.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("f({query:?}) = {:.3} (true 4.0, trees span {lo:.2}..{hi:.2})", model.predict(&query)?);

    for (name, importance) in model.feature_importances() {
        println!("importance {name}: {importance:.3}");
    }

    let path = std::env::temp_dir().join("dmv-example.dmvf");
    forest::save_model(&model, &path)?;
    let loaded = forest::load_model(&path)?;
    assert_eq!(loaded.predict(&query)?, model.predict(&query)?);
    println!("model saved to {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    Ok(())
}
