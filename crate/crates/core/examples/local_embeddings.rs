//! Deterministic feature-hashing embeddings of record text, with the
//! content-addressed cache.
//!
//!     cargo run --example local_embeddings

use std::path::PathBuf;

use dmv::embed::{self, EmbeddingCache, HttpTransport, ProviderConfig};
use dmv::ingest::{self, ColumnSchema};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let table = ingest::load_csv(&dir.join("data/synthetic_cdc.csv"), &ColumnSchema::cdc_default())?;
    let columns: Vec<String> = ["topic", "question", "stratification1"].map(String::from).to_vec();

    let texts: Vec<String> = (0..table.n_rows()).map(|r| embed::build_text(&table, r, &columns)).collect();
    println!("record 0: {}", texts[0]);

    let config = ProviderConfig {
        dimension: 64,
        ..ProviderConfig::default()
    };
    let mut cache = EmbeddingCache::in_memory();
    let vectors = embed::embed_texts(&texts, &config, &mut cache, &HttpTransport)?;
    println!(
        "{} vectors of dimension {}, {} distinct texts cached under `{}`",
        vectors.len(),
        vectors[0].values.len(),
        cache.len(),
        config.effective_model_id()
    );

    let a = embed::embed_local("frequent mental distress among older adults", 64, 42);
    let b = embed::embed_local("older adults with frequent mental distress", 64, 42);
    let c = embed::embed_local("eating two or more fruits a day", 64, 42);
    println!("similar phrasing:   cos = {:.3}", embed::cosine(&a, &b));
    println!("unrelated phrasing: cos = {:.3}", embed::cosine(&a, &c));
    println!("same text twice is identical: {}", a == embed::embed_local("frequent mental distress among older adults", 64, 42));
    Ok(())
}
