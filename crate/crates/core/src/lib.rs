//! Tabular regression over health-survey records with geolocation features
//! and optional text embeddings, evaluated with random forests.

pub mod ablation;
mod codec;
pub mod config;
pub mod embed;
pub mod eval;
pub mod experiment;
pub mod forest;
pub mod ingest;
pub mod matrix;
pub mod pipeline;
pub mod plots;
pub mod preprocess;
pub mod report;
pub mod rng;
pub mod synth;
