//! Remote embedding provider against a local stub server: batching,
//! bearer authentication and the cache that makes reruns free.
//!
//!     cargo run --example remote_embeddings
//!
//! The key is read from DMV_EMBED_API_KEY. The stub accepts any key, so a
//! placeholder is used when the variable is unset.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use dmv::embed::{self, EmbeddingCache, HttpTransport, ProviderConfig, ProviderKind, DEFAULT_API_KEY_ENV};

fn stub_server() -> (String, Arc<AtomicUsize>) {
    let server = tiny_http::Server::http("127.0.0.1:0").expect("bind stub server");
    let url = format!("http://{}/v1/embeddings", server.server_addr().to_ip().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let counter = requests.clone();
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            counter.fetch_add(1, Ordering::SeqCst);
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let json: serde_json::Value = serde_json::from_str(&body).unwrap();
            let data: Vec<serde_json::Value> = json["input"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| serde_json::json!({ "embedding": embed::embed_local(t.as_str().unwrap(), 16, 1) }))
                .collect();
            let reply = serde_json::json!({ "data": data }).to_string();
            let _ = req.respond(tiny_http::Response::from_string(reply));
        }
    });
    (url, requests)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    if std::env::var(DEFAULT_API_KEY_ENV).is_err() {
        println!("{DEFAULT_API_KEY_ENV} is unset; using a placeholder for the stub");
        std::env::set_var(DEFAULT_API_KEY_ENV, "placeholder");
    }
    let (endpoint, requests) = stub_server();
    let config = ProviderConfig {
        kind: ProviderKind::Remote,
        endpoint,
        model_id: "stub-embedder".into(),
        batch_size: 4,
        ..ProviderConfig::default()
    };

    let texts: Vec<String> = (1..=10).map(|i| format!("topic: Mental Health | record {i}")).collect();
    let cache_path = std::env::temp_dir().join("dmv-example-embeddings.cache");
    let _ = std::fs::remove_file(&cache_path);
    std::fs::File::create(&cache_path)?;

    let mut cache = EmbeddingCache::open(&cache_path)?;
    let first = embed::embed_remote(&texts, &config, &mut cache, &HttpTransport)?;
    println!("first pass: {} vectors, {} requests", first.len(), requests.load(Ordering::SeqCst));

    let mut reopened = EmbeddingCache::open(&cache_path)?;
    let second = embed::embed_remote(&texts, &config, &mut reopened, &HttpTransport)?;
    println!("second pass from {}: {} requests in total", cache_path.display(), requests.load(Ordering::SeqCst));
    assert_eq!(first, second);
    Ok(())
}
