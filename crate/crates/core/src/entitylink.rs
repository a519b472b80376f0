//! Entity linking against a TagMe-compatible service (or a local dictionary),
//! confidence thresholding and multi-hot entity features.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::jsonl::{self, LineError};

pub const DEFAULT_RHO_MIN: f64 = 0.1;
pub const DEFAULT_ENTITY_K: usize = 1000;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Dictionary {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("entity service unavailable after {attempts} attempt(s): {last}")]
    Unavailable { attempts: usize, last: TransportError },
    #[error("malformed entity service response: {0}")]
    Parse(String),
}

impl LinkError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, LinkError::Unavailable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("network error: {0}")]
    Network(String),
}

/// One linked spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub spot: String,
    pub entity_id: u64,
    pub title: String,
    /// Linker confidence in [0, 1].
    pub rho: f64,
}

pub trait EntityLinker {
    /// All annotations for `text`, unthresholded.
    fn link(&self, text: &str) -> Result<Vec<EntityAnnotation>, LinkError>;
}

/// Keeps annotations with `rho >= rho_min`, in order.
pub fn filter_by_rho(annotations: &[EntityAnnotation], rho_min: f64) -> Vec<EntityAnnotation> {
    assert!((0.0..=1.0).contains(&rho_min), "rho_min must lie in [0, 1]");
    annotations
        .iter()
        .filter(|a| a.rho >= rho_min)
        .cloned()
        .collect()
}

// ---------------------------------------------------------------------------
// Fixture linker

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub surface: String,
    pub entity_id: u64,
    pub title: String,
    pub rho: f64,
}

/// Offline linker that matches dictionary surfaces as whole words,
/// case-insensitively, longest surface first, without overlaps.
#[derive(Debug, Clone, Default)]
pub struct FixtureLinker {
    /// Lowercased surface → entry, longest surfaces first.
    entries: Vec<(String, DictionaryEntry)>,
}

impl FixtureLinker {
    pub fn new(entries: Vec<DictionaryEntry>) -> Self {
        let mut by_surface: BTreeMap<String, DictionaryEntry> = BTreeMap::new();
        for e in entries {
            by_surface.insert(e.surface.to_lowercase(), e);
        }
        let mut entries: Vec<(String, DictionaryEntry)> = by_surface.into_iter().collect();
        entries.sort_by(|a, b| b.0.chars().count().cmp(&a.0.chars().count()).then(a.0.cmp(&b.0)));
        FixtureLinker { entries }
    }

    pub fn from_file(path: &Path) -> Result<Self, LinkError> {
        let entries = jsonl::read(path).map_err(|e| match e {
            LineError::Io(source) => LinkError::Io {
                path: path.to_path_buf(),
                source,
            },
            LineError::Parse { line, message } => LinkError::Dictionary {
                path: path.to_path_buf(),
                line,
                message,
            },
        })?;
        Ok(FixtureLinker::new(entries))
    }

    pub fn entries(&self) -> impl Iterator<Item = &DictionaryEntry> {
        self.entries.iter().map(|(_, e)| e)
    }
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

impl EntityLinker for FixtureLinker {
    fn link(&self, text: &str) -> Result<Vec<EntityAnnotation>, LinkError> {
        let lower = text.to_lowercase();
        // Byte offsets only line up with the original when lowercasing kept lengths.
        let source = if lower.len() == text.len() { text } else { lower.as_str() };
        let mut taken: Vec<(usize, usize)> = Vec::new();
        let mut found: Vec<(usize, EntityAnnotation)> = Vec::new();
        for (surface, entry) in &self.entries {
            if surface.is_empty() {
                continue;
            }
            for (start, _) in lower.match_indices(surface.as_str()) {
                let end = start + surface.len();
                let before = lower[..start].chars().next_back();
                let after = lower[end..].chars().next();
                if is_word_char(before) || is_word_char(after) {
                    continue;
                }
                if taken.iter().any(|&(s, e)| start < e && s < end) {
                    continue;
                }
                taken.push((start, end));
                found.push((
                    start,
                    EntityAnnotation {
                        spot: source[start..end].to_string(),
                        entity_id: entry.entity_id,
                        title: entry.title.clone(),
                        rho: entry.rho,
                    },
                ));
            }
        }
        found.sort_by_key(|(start, _)| *start);
        Ok(found.into_iter().map(|(_, a)| a).collect())
    }
}

// ---------------------------------------------------------------------------
// Remote linker

/// Blocking HTTP GET returning the response body.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str, query: &[(&str, &str)]) -> Result<String, TransportError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl Default for HttpTransport {
    fn default() -> Self {
        HttpTransport {
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(30))
                .build(),
        }
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str, query: &[(&str, &str)]) -> Result<String, TransportError> {
        let mut req = self.agent.get(url);
        for (k, v) in query {
            req = req.query(k, v);
        }
        match req.call() {
            Ok(resp) => resp
                .into_string()
                .map_err(|e| TransportError::Network(e.to_string())),
            Err(ureq::Error::Status(code, _)) => Err(TransportError::Status(code)),
            Err(e) => Err(TransportError::Network(e.to_string())),
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
pub struct WireAnnotation {
    pub spot: String,
    pub id: u64,
    #[serde(default)]
    pub title: String,
    pub rho: f64,
}

/// Response body of the `/tag` endpoint.
#[derive(Debug, Deserialize, Serialize)]
pub struct WireResponse {
    #[serde(default)]
    pub annotations: Vec<WireAnnotation>,
}

impl WireResponse {
    pub fn from_annotations(annotations: &[EntityAnnotation]) -> Self {
        WireResponse {
            annotations: annotations
                .iter()
                .map(|a| WireAnnotation {
                    spot: a.spot.clone(),
                    id: a.entity_id,
                    title: a.title.clone(),
                    rho: a.rho,
                })
                .collect(),
        }
    }
}

pub fn text_sha256(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    text_sha256: String,
    annotations: Vec<EntityAnnotation>,
}

/// Append-only JSONL response cache keyed by the SHA-256 of the text.
pub struct ResponseCache {
    entries: RwLock<HashMap<String, Vec<EntityAnnotation>>>,
    file: Option<(PathBuf, Mutex<File>)>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            entries: RwLock::new(HashMap::new()),
            file: None,
        }
    }

    pub fn open(path: &Path) -> Result<Self, LinkError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let lines: Vec<CacheLine> = jsonl::read(path).map_err(|e| match e {
                LineError::Io(source) => LinkError::Io {
                    path: path.to_path_buf(),
                    source,
                },
                LineError::Parse { line, message } => LinkError::Dictionary {
                    path: path.to_path_buf(),
                    line,
                    message,
                },
            })?;
            for l in lines {
                entries.insert(l.text_sha256, l.annotations);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| LinkError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(ResponseCache {
            entries: RwLock::new(entries),
            file: Some((path.to_path_buf(), Mutex::new(file))),
        })
    }

    pub fn get(&self, text: &str) -> Option<Vec<EntityAnnotation>> {
        self.entries.read().unwrap().get(&text_sha256(text)).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn insert(&self, text: &str, annotations: &[EntityAnnotation]) -> Result<(), LinkError> {
        let key = text_sha256(text);
        let mut entries = self.entries.write().unwrap();
        if entries.contains_key(&key) {
            return Ok(());
        }
        if let Some((path, file)) = &self.file {
            let line = serde_json::to_string(&CacheLine {
                text_sha256: key.clone(),
                annotations: annotations.to_vec(),
            })
            .expect("cache line serializes");
            let mut f = file.lock().unwrap();
            writeln!(f, "{line}")
                .and_then(|_| f.flush())
                .map_err(|source| LinkError::Io {
                    path: path.clone(),
                    source,
                })?;
        }
        entries.insert(key, annotations.to_vec());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

/// Linker backed by a TagMe-compatible `/tag` endpoint with a response cache.
pub struct RemoteLinker<T: Transport = HttpTransport> {
    endpoint: String,
    token: String,
    transport: T,
    cache: ResponseCache,
    retry: RetryPolicy,
    calls: AtomicUsize,
}

impl RemoteLinker<HttpTransport> {
    pub fn http(endpoint: impl Into<String>, token: impl Into<String>, cache: ResponseCache) -> Self {
        RemoteLinker::new(endpoint, token, HttpTransport::default(), cache)
    }
}

impl<T: Transport> RemoteLinker<T> {
    pub fn new(endpoint: impl Into<String>, token: impl Into<String>, transport: T, cache: ResponseCache) -> Self {
        RemoteLinker {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            token: token.into(),
            transport,
            cache,
            retry: RetryPolicy::default(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Number of transport requests issued so far (retries included).
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    fn fetch(&self, text: &str) -> Result<String, LinkError> {
        let url = format!("{}/tag", self.endpoint);
        let query = [("text", text), ("gcube-token", self.token.as_str())];
        let mut backoff = self.retry.initial_backoff;
        let attempts = self.retry.attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.transport.get(&url, &query) {
                Ok(body) => return Ok(body),
                Err(e) if attempt >= attempts => {
                    return Err(LinkError::Unavailable { attempts, last: e });
                }
                Err(e) => {
                    log::warn!("entity service attempt {attempt} failed: {e}; retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }
}

impl<T: Transport> EntityLinker for RemoteLinker<T> {
    fn link(&self, text: &str) -> Result<Vec<EntityAnnotation>, LinkError> {
        if let Some(hit) = self.cache.get(text) {
            return Ok(hit);
        }
        let body = self.fetch(text)?;
        let response: WireResponse = serde_json::from_str(&body).map_err(|e| LinkError::Parse(e.to_string()))?;
        let annotations: Vec<EntityAnnotation> = response
            .annotations
            .into_iter()
            .map(|a| EntityAnnotation {
                spot: a.spot,
                entity_id: a.id,
                title: a.title,
                rho: a.rho,
            })
            .collect();
        if let Some(bad) = annotations.iter().find(|a| !(0.0..=1.0).contains(&a.rho)) {
            return Err(LinkError::Parse(format!("rho {} outside [0, 1]", bad.rho)));
        }
        self.cache.insert(text, &annotations)?;
        Ok(annotations)
    }
}

/// Links `texts` with at most `parallelism` concurrent requests; results keep input order.
pub fn link_batch<L>(linker: &L, texts: &[String], parallelism: usize) -> Vec<Result<Vec<EntityAnnotation>, LinkError>>
where
    L: EntityLinker + Sync + ?Sized,
{
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Vec<EntityAnnotation>, LinkError>>>> =
        Mutex::new((0..texts.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..parallelism.clamp(1, texts.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= texts.len() {
                    break;
                }
                let r = linker.link(&texts[i]);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every index is processed"))
        .collect()
}

// ---------------------------------------------------------------------------
// Features

/// Dense index over the most frequent training entities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityVocab {
    pub capacity: usize,
    /// Entity ids in index order.
    pub ids: Vec<u64>,
    #[serde(skip)]
    index: HashMap<u64, usize>,
}

impl EntityVocab {
    pub fn from_ids(capacity: usize, ids: Vec<u64>) -> Self {
        assert!(ids.len() <= capacity, "vocab larger than its capacity");
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        EntityVocab {
            capacity,
            ids,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, entity_id: u64) -> Option<usize> {
        self.index.get(&entity_id).copied()
    }

    /// Rebuilds the lookup after deserialization.
    pub fn reindexed(self) -> Self {
        EntityVocab::from_ids(self.capacity, self.ids)
    }
}

/// Top-`k` entity ids by frequency over (already thresholded) training
/// annotations, ties broken by ascending id.
pub fn build_entity_vocab<'a, I>(training_annotations: I, k: usize) -> EntityVocab
where
    I: IntoIterator<Item = &'a [EntityAnnotation]>,
{
    let mut freq: HashMap<u64, usize> = HashMap::new();
    for doc in training_annotations {
        for a in doc {
            *freq.entry(a.entity_id).or_default() += 1;
        }
    }
    let mut ranked: Vec<(u64, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    EntityVocab::from_ids(k, ranked.into_iter().take(k).map(|(id, _)| id).collect())
}

/// Multi-hot vector of length `vocab.capacity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityFeatures {
    pub vector: Vec<f32>,
}

pub fn entity_features(annotations: &[EntityAnnotation], vocab: &EntityVocab) -> EntityFeatures {
    let mut vector = vec![0f32; vocab.capacity];
    for a in annotations {
        if let Some(i) = vocab.index_of(a.entity_id) {
            vector[i] = 1.0;
        }
    }
    EntityFeatures { vector }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(id: u64, rho: f64) -> EntityAnnotation {
        EntityAnnotation {
            spot: format!("s{id}"),
            entity_id: id,
            title: format!("T{id}"),
            rho,
        }
    }

    fn measles() -> FixtureLinker {
        FixtureLinker::new(vec![DictionaryEntry {
            surface: "measles".into(),
            entity_id: 42,
            title: "Measles".into(),
            rho: 0.30,
        }])
    }

    #[test]
    fn fixture_lookup() {
        let out = measles().link("measles outbreak").unwrap();
        assert_eq!(out, vec![EntityAnnotation {
            spot: "measles".into(),
            entity_id: 42,
            title: "Measles".into(),
            rho: 0.30
        }]);
        assert!(measles().link("nothing to see").unwrap().is_empty());
    }

    #[test]
    fn fixture_respects_word_boundaries_and_case() {
        let linker = FixtureLinker::new(vec![
            DictionaryEntry {
                surface: "MMR vaccine".into(),
                entity_id: 1,
                title: "MMR vaccine".into(),
                rho: 0.5,
            },
            DictionaryEntry {
                surface: "vaccine".into(),
                entity_id: 2,
                title: "Vaccine".into(),
                rho: 0.2,
            },
        ]);
        let out = linker.link("The mmr vaccine, a vaccine; vaccines").unwrap();
        let ids: Vec<u64> = out.iter().map(|a| a.entity_id).collect();
        assert_eq!(ids, [1, 2]);
        assert_eq!(out[0].spot, "mmr vaccine");
    }

    #[test]
    fn rho_threshold_boundary_inclusive() {
        let kept = filter_by_rho(&[ann(1, 0.05), ann(2, 0.10), ann(3, 0.95)], 0.1);
        let rhos: Vec<f64> = kept.iter().map(|a| a.rho).collect();
        assert_eq!(rhos, [0.10, 0.95]);
    }

    #[test]
    fn rho_zero_is_identity() {
        let all = vec![ann(1, 0.0), ann(2, 0.5)];
        assert_eq!(filter_by_rho(&all, 0.0), all);
        assert!(filter_by_rho(&[], 0.1).is_empty());
    }

    #[test]
    fn vocab_tie_break() {
        let mut docs: Vec<Vec<EntityAnnotation>> = Vec::new();
        for _ in 0..5 {
            docs.push(vec![ann(9, 0.5), ann(7, 0.5)]);
        }
        docs.push(vec![ann(3, 0.5)]);
        let vocab = build_entity_vocab(docs.iter().map(Vec::as_slice), 2);
        assert_eq!(vocab.ids, [7, 9]);
        assert_eq!(vocab.index_of(7), Some(0));
        assert_eq!(vocab.index_of(3), None);

        let all = build_entity_vocab(docs.iter().map(Vec::as_slice), 1000);
        assert_eq!(all.ids, [7, 9, 3]);
        let empty = build_entity_vocab(std::iter::empty(), 10);
        assert!(empty.is_empty());
        assert_eq!(entity_features(&[ann(7, 1.0)], &empty).vector, vec![0.0; 10]);
    }

    #[test]
    fn features_multi_hot() {
        let vocab = EntityVocab::from_ids(2, vec![42, 7]);
        assert_eq!(entity_features(&[ann(42, 0.3)], &vocab).vector, [1.0, 0.0]);
        assert_eq!(entity_features(&[ann(42, 0.3), ann(42, 0.9)], &vocab).vector, [1.0, 0.0]);
        assert_eq!(entity_features(&[ann(99, 0.3)], &vocab).vector, [0.0, 0.0]);
    }

    #[test]
    fn vocab_serde_reindexes() {
        let vocab = EntityVocab::from_ids(4, vec![5, 1]);
        let json = serde_json::to_string(&vocab).unwrap();
        let back: EntityVocab = serde_json::from_str::<EntityVocab>(&json).unwrap().reindexed();
        assert_eq!(back, vocab);
        assert_eq!(back.index_of(1), Some(1));
    }

    struct Flaky {
        failures: AtomicUsize,
        body: String,
    }

    impl Transport for Flaky {
        fn get(&self, _url: &str, _q: &[(&str, &str)]) -> Result<String, TransportError> {
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(TransportError::Status(503));
            }
            Ok(self.body.clone())
        }
    }

    fn quick_retry() -> RetryPolicy {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(1),
        }
    }

    #[test]
    fn remote_retries_then_succeeds() {
        let transport = Flaky {
            failures: AtomicUsize::new(2),
            body: r#"{"annotations":[{"spot":"measles","id":42,"title":"Measles","rho":0.3,"start":0,"end":7}]}"#.into(),
        };
        let linker = RemoteLinker::new("http://x", "tok", transport, ResponseCache::in_memory()).with_retry(quick_retry());
        let out = linker.link("measles outbreak").unwrap();
        assert_eq!(out, measles().link("measles outbreak").unwrap());
        assert_eq!(linker.calls(), 3);
    }

    #[test]
    fn remote_gives_up_after_three_attempts() {
        let transport = Flaky {
            failures: AtomicUsize::new(10),
            body: String::new(),
        };
        let linker = RemoteLinker::new("http://x", "tok", transport, ResponseCache::in_memory()).with_retry(quick_retry());
        let err = linker.link("text").unwrap_err();
        assert!(err.is_retriable());
        assert_eq!(linker.calls(), 3);
    }

    #[test]
    fn remote_malformed_response() {
        let transport = Flaky {
            failures: AtomicUsize::new(0),
            body: "<html>".into(),
        };
        let linker = RemoteLinker::new("http://x", "tok", transport, ResponseCache::in_memory());
        assert!(matches!(linker.link("text"), Err(LinkError::Parse(_))));
    }

    #[test]
    fn cache_serves_repeat_queries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let body = r#"{"annotations":[{"spot":"measles","id":42,"title":"Measles","rho":0.3}]}"#;
        {
            let t = Flaky {
                failures: AtomicUsize::new(0),
                body: body.into(),
            };
            let linker = RemoteLinker::new("http://x", "tok", t, ResponseCache::open(&path).unwrap());
            linker.link("measles outbreak").unwrap();
            linker.link("measles outbreak").unwrap();
            assert_eq!(linker.calls(), 1);
        }
        // A fresh process reuses the on-disk cache without any request.
        let t = Flaky {
            failures: AtomicUsize::new(100),
            body: String::new(),
        };
        let linker = RemoteLinker::new("http://x", "tok", t, ResponseCache::open(&path).unwrap());
        assert_eq!(linker.link("measles outbreak").unwrap()[0].entity_id, 42);
        assert_eq!(linker.calls(), 0);
        let line = std::fs::read_to_string(&path).unwrap();
        assert!(line.contains(&text_sha256("measles outbreak")));
    }

    #[test]
    fn batch_preserves_order() {
        let linker = measles();
        let texts: Vec<String> = (0..20)
            .map(|i| if i % 2 == 0 { format!("measles {i}") } else { format!("flu {i}") })
            .collect();
        let out = link_batch(&linker, &texts, 4);
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.as_ref().unwrap().len(), usize::from(i % 2 == 0));
        }
    }
}
