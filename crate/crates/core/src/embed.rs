//! Text embeddings for records.
//!
//! Each record is serialized to a canonical `name: value | ...` string and
//! embedded either by a hosted embeddings endpoint (JSON over HTTP, the
//! common `{"model", "input"}` → `{"data": [{"embedding"}]}` shape) or by a
//! deterministic feature-hashing embedder that needs no network. Results
//! are memoized in an append-only cache file.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::RawTable;
use crate::rng::mix64;

pub const DEFAULT_API_KEY_ENV: &str = "DMV_EMBED_API_KEY";
pub const LOCAL_PROVIDER_ID: &str = "local";
pub const REMOTE_PROVIDER_ID: &str = "remote";
pub const MISSING_TEXT: &str = "<missing>";

/// Columns whose values make up the embedded text by default.
pub const DEFAULT_TEXT_COLUMNS: &[&str] = &[
    "class",
    "topic",
    "question",
    "stratificationcategory1",
    "stratification1",
    "stratificationcategory2",
    "stratification2",
];

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("environment variable `{0}` with the API key is not set")]
    AuthMissing(String),
    #[error("provider returned status {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt cache line {line}: {reason}")]
    CorruptCache { line: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider_id: String,
    pub model_id: String,
}

/// Canonical text of one record: `name: value` pairs joined by `" | "`.
pub fn build_text(table: &RawTable, row: usize, text_columns: &[String]) -> String {
    let mut parts = Vec::new();
    for col in table.schema.columns() {
        if text_columns.iter().any(|c| c == &col.name) {
            let value = table.cell(row, &col.name).unwrap_or(MISSING_TEXT);
            parts.push(format!("{}: {}", col.name, value));
        }
    }
    parts.join(" | ")
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Signed feature hashing of word unigrams and bigrams, L2-normalized.
///
/// Feature `f` lands in bucket `h % dimension` with sign from the low bit of
/// `mix64(h)`, where `h = mix64(fnv1a64(f) ^ seed)`. Empty text yields the
/// zero vector.
pub fn embed_local(text: &str, dimension: usize, seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; dimension];
    if dimension == 0 {
        return v;
    }
    let tokens = tokenize(text);
    let mut add = |feature: &str| {
        let h = mix64(fnv1a64(feature.as_bytes()) ^ seed);
        let bucket = (h % dimension as u64) as usize;
        let sign = if mix64(h) & 1 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    };
    for t in &tokens {
        add(t);
    }
    for pair in tokens.windows(2) {
        add(&format!("{} {}", pair[0], pair[1]));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

// --- cache ----------------------------------------------------------------

pub fn cache_key(provider_id: &str, model_id: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(provider_id.as_bytes());
    h.update(b"|");
    h.update(model_id.as_bytes());
    h.update(b"|");
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

/// Append-only embedding cache, one `<key> TAB <D> TAB <floats>` line per
/// entry. Later lines for the same key win on load.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    entries: HashMap<String, Vec<f64>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) a cache file.
    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(fs::File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                let (key, values) = parse_cache_line(&line).map_err(|reason| {
                    EmbedError::CorruptCache {
                        line: i + 1,
                        reason,
                    }
                })?;
                entries.insert(key, values);
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, provider_id: &str, model_id: &str, text: &str) -> Option<&[f64]> {
        self.entries
            .get(&cache_key(provider_id, model_id, text))
            .map(Vec::as_slice)
    }

    pub fn put(
        &mut self,
        provider_id: &str,
        model_id: &str,
        text: &str,
        values: &[f64],
    ) -> Result<(), EmbedError> {
        self.put_many(provider_id, model_id, [(text, values)])
    }

    /// Appends several entries with one file write.
    pub fn put_many<'a, I>(&mut self, provider_id: &str, model_id: &str, items: I) -> Result<(), EmbedError>
    where
        I: IntoIterator<Item = (&'a str, &'a [f64])>,
    {
        let mut buf = String::new();
        for (text, values) in items {
            let key = cache_key(provider_id, model_id, text);
            buf.push_str(&format_cache_line(&key, values));
            self.entries.insert(key, values.to_vec());
        }
        if let Some(path) = &self.path {
            if !buf.is_empty() {
                let mut f = OpenOptions::new().create(true).append(true).open(path)?;
                f.write_all(buf.as_bytes())?;
                f.flush()?;
            }
        }
        Ok(())
    }
}

fn format_cache_line(key: &str, values: &[f64]) -> String {
    let floats: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    format!("{key}\t{}\t{}\n", values.len(), floats.join(" "))
}

fn parse_cache_line(line: &str) -> Result<(String, Vec<f64>), String> {
    let mut fields = line.split('\t');
    let key = fields.next().ok_or("missing key")?;
    if key.len() != 64 || !key.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err("key is not a sha256 hex digest".into());
    }
    let dim: usize = fields
        .next()
        .ok_or("missing dimension")?
        .parse()
        .map_err(|_| "bad dimension")?;
    let values: Vec<f64> = fields
        .next()
        .unwrap_or("")
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("bad float `{t}`")))
        .collect::<Result<_, _>>()?;
    if values.len() != dim {
        return Err(format!("declared {dim} values, found {}", values.len()));
    }
    Ok((key.to_string(), values))
}

// --- providers ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model_id: String,
    /// Output size of the local embedder; remote sizes are provider-reported.
    pub dimension: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub max_retries: u32,
    pub timeout_secs: f64,
    /// First retry delay; doubles on each further attempt.
    pub backoff_base_ms: u64,
    /// Maximum batches in flight at once.
    pub concurrency: usize,
    pub api_key_env: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Local,
            endpoint: "http://127.0.0.1:8080/v1/embeddings".into(),
            model_id: "feature-hash".into(),
            dimension: 256,
            seed: 42,
            batch_size: 64,
            max_retries: 5,
            timeout_secs: 30.0,
            backoff_base_ms: 1000,
            concurrency: 4,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.batch_size < 1 {
            return Err(EmbedError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.concurrency < 1 {
            return Err(EmbedError::InvalidConfig("concurrency must be >= 1".into()));
        }
        if self.kind == ProviderKind::Local && self.dimension < 8 {
            return Err(EmbedError::InvalidConfig("local dimension must be >= 8".into()));
        }
        Ok(())
    }

    pub fn provider_id(&self) -> &'static str {
        match self.kind {
            ProviderKind::Local => LOCAL_PROVIDER_ID,
            ProviderKind::Remote => REMOTE_PROVIDER_ID,
        }
    }

    /// Model identity used in cache keys; the local one encodes its parameters.
    pub fn effective_model_id(&self) -> String {
        match self.kind {
            ProviderKind::Local => format!("{}-d{}-s{}", self.model_id, self.dimension, self.seed),
            ProviderKind::Remote => self.model_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connection(String),
}

/// A blocking JSON POST.
pub trait Transport: Sync {
    fn post_json(
        &self,
        url: &str,
        api_key: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

/// [`Transport`] over plain HTTP(S) via `ureq`.
#[derive(Debug, Default)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        api_key: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let result = agent
            .post(url)
            .set("Authorization", &format!("Bearer {api_key}"))
            .send_json(body.clone());
        match result {
            Ok(resp) => {
                let status = resp.status();
                let body = resp
                    .into_string()
                    .map_err(|e| TransportError::Connection(e.to_string()))?;
                Ok(HttpResponse { status, body })
            }
            Err(ureq::Error::Status(status, resp)) => Ok(HttpResponse {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.to_ascii_lowercase().contains("timed out") {
                    Err(TransportError::Timeout)
                } else {
                    Err(TransportError::Connection(msg))
                }
            }
        }
    }
}

#[derive(Deserialize)]
struct ResponseBody {
    data: Vec<ResponseItem>,
}

#[derive(Deserialize)]
struct ResponseItem {
    embedding: Vec<f64>,
}

fn backoff_delay(base_ms: u64, attempt: u32) -> Duration {
    let exp = base_ms.saturating_mul(1u64 << attempt.min(20));
    let jitter = rand::random::<f64>() * 0.25 * exp as f64;
    Duration::from_millis(exp) + Duration::from_secs_f64(jitter / 1000.0)
}

fn request_batch(
    batch: &[&str],
    config: &ProviderConfig,
    api_key: &str,
    transport: &dyn Transport,
) -> Result<Vec<Vec<f64>>, EmbedError> {
    let body = serde_json::json!({ "model": config.model_id, "input": batch });
    let timeout = Duration::from_secs_f64(config.timeout_secs.max(0.001));
    let mut attempt = 0;
    loop {
        let (status, text) = match transport.post_json(&config.endpoint, api_key, &body, timeout) {
            Ok(r) if (200..300).contains(&r.status) => {
                let parsed: ResponseBody = serde_json::from_str(&r.body)
                    .map_err(|e| EmbedError::BadResponse(e.to_string()))?;
                if parsed.data.len() != batch.len() {
                    return Err(EmbedError::BadResponse(format!(
                        "{} embeddings for {} inputs",
                        parsed.data.len(),
                        batch.len()
                    )));
                }
                return Ok(parsed.data.into_iter().map(|d| d.embedding).collect());
            }
            Ok(r) if r.status == 429 || r.status >= 500 => (r.status, r.body),
            Ok(r) => {
                return Err(EmbedError::ProviderError {
                    status: r.status,
                    body: r.body,
                })
            }
            Err(e) => (0, e.to_string()),
        };
        if attempt >= config.max_retries {
            return Err(EmbedError::ProviderError { status, body: text });
        }
        let delay = backoff_delay(config.backoff_base_ms, attempt);
        log::warn!("embedding request failed ({status}: {text}); retrying in {delay:?}");
        std::thread::sleep(delay);
        attempt += 1;
    }
}

/// Embeds `texts` through the remote provider, skipping cache hits.
///
/// Misses are deduplicated, sent in batches of `batch_size` with at most
/// `concurrency` batches in flight, and written to the cache in input order.
pub fn embed_remote(
    texts: &[String],
    config: &ProviderConfig,
    cache: &mut EmbeddingCache,
    transport: &dyn Transport,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    config.validate()?;
    let provider = REMOTE_PROVIDER_ID;
    let model = config.model_id.as_str();

    let mut misses: Vec<&str> = Vec::new();
    let mut queued: std::collections::HashSet<&str> = std::collections::HashSet::new();
    for t in texts {
        if cache.get(provider, model, t).is_none() && queued.insert(t.as_str()) {
            misses.push(t.as_str());
        }
    }

    if !misses.is_empty() {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| EmbedError::AuthMissing(config.api_key_env.clone()))?;
        let batches: Vec<&[&str]> = misses.chunks(config.batch_size).collect();
        for wave in batches.chunks(config.concurrency) {
            let results: Vec<Result<Vec<Vec<f64>>, EmbedError>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|batch| s.spawn(|| request_batch(batch, config, &api_key, transport)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            for (batch, result) in wave.iter().zip(results) {
                let vectors = result?;
                cache.put_many(
                    provider,
                    model,
                    batch.iter().copied().zip(vectors.iter().map(Vec::as_slice)),
                )?;
            }
        }
    }

    let out: Vec<EmbeddingVector> = texts
        .iter()
        .map(|t| EmbeddingVector {
            values: cache.get(provider, model, t).expect("filled above").to_vec(),
            provider_id: provider.to_string(),
            model_id: model.to_string(),
        })
        .collect();
    check_dimensions(&out)?;
    Ok(out)
}

fn check_dimensions(vectors: &[EmbeddingVector]) -> Result<(), EmbedError> {
    if let Some(first) = vectors.first() {
        let expected = first.values.len();
        for v in vectors {
            if v.values.len() != expected {
                return Err(EmbedError::DimensionMismatch {
                    expected,
                    found: v.values.len(),
                });
            }
            if v.values.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::BadResponse("non-finite embedding value".into()));
            }
        }
    }
    Ok(())
}

/// Embeds through whichever provider `config` names, using the cache for both.
pub fn embed_texts(
    texts: &[String],
    config: &ProviderConfig,
    cache: &mut EmbeddingCache,
    transport: &dyn Transport,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    config.validate()?;
    match config.kind {
        ProviderKind::Remote => embed_remote(texts, config, cache, transport),
        ProviderKind::Local => {
            let provider = LOCAL_PROVIDER_ID;
            let model = config.effective_model_id();
            let mut fresh: Vec<(&str, Vec<f64>)> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for t in texts {
                if cache.get(provider, &model, t).is_none() && seen.insert(t.as_str()) {
                    fresh.push((t, embed_local(t, config.dimension, config.seed)));
                }
            }
            cache.put_many(provider, &model, fresh.iter().map(|(t, v)| (*t, v.as_slice())))?;
            let out: Vec<EmbeddingVector> = texts
                .iter()
                .map(|t| EmbeddingVector {
                    values: cache.get(provider, &model, t).expect("filled above").to_vec(),
                    provider_id: provider.to_string(),
                    model_id: model.clone(),
                })
                .collect();
            check_dimensions(&out)?;
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ColumnSchema;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    fn table() -> RawTable {
        let schema = ColumnSchema::parse(
            "topic = categorical\nquestion = categorical\ngeolocation = geolocation\ndata_value = target\n",
        )
        .unwrap();
        RawTable::new(
            schema,
            vec![
                vec![
                    Some("Mental Health".into()),
                    Some("Percentage of older adults who are experiencing frequent mental distress".into()),
                    None,
                    Some("9.0".into()),
                ],
                vec![None, None, None, None],
            ],
        )
        .unwrap()
    }

    #[test]
    fn text_format() {
        let cols = vec!["question".to_string(), "topic".to_string()];
        assert_eq!(
            build_text(&table(), 0, &cols),
            "topic: Mental Health | question: Percentage of older adults who are experiencing frequent mental distress"
        );
        assert_eq!(build_text(&table(), 1, &cols), "topic: <missing> | question: <missing>");
        assert_eq!(build_text(&table(), 0, &cols), build_text(&table(), 0, &cols));
    }

    #[test]
    fn local_embedding_contract() {
        let t = "topic: Mental Health | question: frequent mental distress";
        let a = embed_local(t, 64, 42);
        assert_eq!(a, embed_local(t, 64, 42));
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert!(embed_local("", 64, 42).iter().all(|&x| x == 0.0));
        assert!((cosine(&a, &embed_local(t, 64, 42)) - 1.0).abs() < 1e-12);
        assert_ne!(a, embed_local(t, 64, 43));
    }

    struct Mock {
        calls: AtomicUsize,
        batch_sizes: Mutex<Vec<usize>>,
        failures_before_success: usize,
        status: u16,
        dim: usize,
    }

    impl Mock {
        fn new(dim: usize) -> Self {
            Self {
                calls: AtomicUsize::new(0),
                batch_sizes: Mutex::new(Vec::new()),
                failures_before_success: 0,
                status: 503,
                dim,
            }
        }
    }

    impl Transport for Mock {
        fn post_json(
            &self,
            _url: &str,
            api_key: &str,
            body: &serde_json::Value,
            _timeout: Duration,
        ) -> Result<HttpResponse, TransportError> {
            assert_eq!(api_key, "secret");
            let call = self.calls.fetch_add(1, Ordering::SeqCst);
            if call < self.failures_before_success {
                return Ok(HttpResponse { status: self.status, body: "busy".into() });
            }
            let inputs = body["input"].as_array().unwrap();
            self.batch_sizes.lock().unwrap().push(inputs.len());
            let data: Vec<_> = inputs
                .iter()
                .map(|t| serde_json::json!({ "embedding": embed_local(t.as_str().unwrap(), self.dim, 1) }))
                .collect();
            Ok(HttpResponse { status: 200, body: serde_json::json!({ "data": data }).to_string() })
        }
    }

    fn remote_config(env: &str) -> ProviderConfig {
        std::env::set_var(env, "secret");
        ProviderConfig {
            kind: ProviderKind::Remote,
            model_id: "m".into(),
            batch_size: 2,
            backoff_base_ms: 1,
            api_key_env: env.into(),
            ..Default::default()
        }
    }

    fn texts(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("text number {i}")).collect()
    }

    #[test]
    fn batching_and_order() {
        let cfg = remote_config("DMV_TEST_KEY_BATCH");
        let mock = Mock::new(16);
        let mut cache = EmbeddingCache::in_memory();
        let out = embed_remote(&texts(5), &cfg, &mut cache, &mock).unwrap();
        assert_eq!(mock.calls.load(Ordering::SeqCst), 3);
        let mut sizes = mock.batch_sizes.lock().unwrap().clone();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 2, 2]);
        for (t, v) in texts(5).iter().zip(&out) {
            assert_eq!(v.values, embed_local(t, 16, 1));
        }
        // second call is served from the cache
        let again = embed_remote(&texts(5), &cfg, &mut cache, &mock).unwrap();
        assert_eq!(mock.calls.load(Ordering::SeqCst), 3);
        assert_eq!(again, out);
    }

    #[test]
    fn retries_then_succeeds() {
        let cfg = remote_config("DMV_TEST_KEY_RETRY");
        let mock = Mock { failures_before_success: 2, ..Mock::new(8) };
        let out = embed_remote(&texts(1), &cfg, &mut EmbeddingCache::in_memory(), &mock).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(mock.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retries_exhausted() {
        let cfg = ProviderConfig { max_retries: 2, ..remote_config("DMV_TEST_KEY_EXHAUST") };
        let mock = Mock { failures_before_success: 100, status: 429, ..Mock::new(8) };
        let err = embed_remote(&texts(1), &cfg, &mut EmbeddingCache::in_memory(), &mock).unwrap_err();
        assert!(matches!(err, EmbedError::ProviderError { status: 429, .. }));
        assert_eq!(mock.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let cfg = remote_config("DMV_TEST_KEY_400");
        let mock = Mock { failures_before_success: 100, status: 400, ..Mock::new(8) };
        let err = embed_remote(&texts(1), &cfg, &mut EmbeddingCache::in_memory(), &mock).unwrap_err();
        assert!(matches!(err, EmbedError::ProviderError { status: 400, .. }));
        assert_eq!(mock.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn missing_key() {
        let cfg = ProviderConfig {
            kind: ProviderKind::Remote,
            api_key_env: "DMV_TEST_KEY_DEFINITELY_UNSET".into(),
            ..Default::default()
        };
        let err = embed_remote(&texts(1), &cfg, &mut EmbeddingCache::in_memory(), &Mock::new(8)).unwrap_err();
        assert!(matches!(err, EmbedError::AuthMissing(_)));
    }

    #[test]
    fn unequal_dimensions_rejected() {
        let cfg = remote_config("DMV_TEST_KEY_DIM");
        let mut cache = EmbeddingCache::in_memory();
        cache.put(REMOTE_PROVIDER_ID, "m", "text number 0", &[1.0, 2.0]).unwrap();
        let err = embed_remote(&texts(2), &cfg, &mut cache, &Mock::new(8)).unwrap_err();
        assert!(matches!(err, EmbedError::DimensionMismatch { .. }));
    }

    #[test]
    fn cache_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.cache");
        let v = vec![0.1, -1e-300, 12345.678901234567, f64::MIN_POSITIVE, 1.0 / 3.0];
        {
            let mut c = EmbeddingCache::open(&path).unwrap();
            c.put("p", "m", "hello", &v).unwrap();
            c.put("p", "m", "other", &[0.0; 5]).unwrap();
        }
        let c = EmbeddingCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        let back = c.get("p", "m", "hello").unwrap();
        assert!(back.iter().zip(&v).all(|(a, b)| a.to_bits() == b.to_bits()));
        let line = fs::read_to_string(&path).unwrap();
        let first = line.lines().next().unwrap();
        let fields: Vec<&str> = first.split('\t').collect();
        assert_eq!(fields[0], cache_key("p", "m", "hello"));
        assert_eq!(fields[1], "5");

        fs::write(&path, "nothex\t1\t1.0\n").unwrap();
        assert!(matches!(EmbeddingCache::open(&path), Err(EmbedError::CorruptCache { line: 1, .. })));
    }
}
