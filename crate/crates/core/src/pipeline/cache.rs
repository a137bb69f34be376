//! Persistent response cache keyed by `(backend identity, operation, content hash)`.
//!
//! Layout under the cache directory:
//!
//! ```text
//! segments/<sha256(identity)[..16]>.jsonl   append-only, one entry per line
//! index.json                                identity -> segment file, entry count
//! last_run.json                             hit/miss counters of the most recent run
//! ```
//!
//! Values are stored as the exact serialized response text, so a hit
//! returns byte-identical data. A torn final line (crash mid-append) is
//! skipped on load.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    BackendDescriptor, BackendError, Backends, CaptionParser, DetectionQueryResult, Detector, Embedder, ParseRequest,
    SegmentationQueryResult, Segmenter,
};
use crate::hashing::{parts_hash, text_hash};
use crate::model::ImageRef;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub identity: String,
    pub op: String,
    pub content_hash: String,
}

impl CacheKey {
    pub fn new(identity: impl Into<String>, op: impl Into<String>, content_hash: impl Into<String>) -> Self {
        Self {
            identity: identity.into(),
            op: op.into(),
            content_hash: content_hash.into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SegmentLine {
    identity: String,
    op: String,
    key: String,
    value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub identity: String,
    pub file: String,
    pub entries: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: usize,
    pub hits: usize,
    pub misses: usize,
    pub segments: Vec<IndexEntry>,
}

impl CacheStats {
    pub fn hit_ratio(&self) -> Option<f64> {
        let total = self.hits + self.misses;
        (total > 0).then(|| self.hits as f64 / total as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounters {
    pub hits: usize,
    pub misses: usize,
}

const SEGMENT_DIR: &str = "segments";
const INDEX_FILE: &str = "index.json";
const LAST_RUN_FILE: &str = "last_run.json";

#[derive(Debug, Default)]
pub struct ScoreCache {
    dir: Option<PathBuf>,
    entries: RwLock<HashMap<CacheKey, Arc<str>>>,
    writers: Mutex<HashMap<String, File>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

fn segment_name(identity: &str) -> String {
    format!("{}.jsonl", &text_hash(identity)[..16])
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens or creates a cache directory and loads every segment.
    pub fn open(dir: &Path) -> Result<Self, CacheError> {
        let seg_dir = dir.join(SEGMENT_DIR);
        fs::create_dir_all(&seg_dir).map_err(io_err(&seg_dir))?;
        let mut entries = HashMap::new();
        let mut files: Vec<PathBuf> = fs::read_dir(&seg_dir)
            .map_err(io_err(&seg_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        for path in files {
            let file = File::open(&path).map_err(io_err(&path))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err(&path))?;
                match serde_json::from_str::<SegmentLine>(&line) {
                    Ok(l) => {
                        entries.insert(CacheKey::new(l.identity, l.op, l.key), Arc::from(l.value));
                    }
                    Err(e) => log::warn!("{}:{}: skipping unreadable cache line: {e}", path.display(), n + 1),
                }
            }
        }
        Ok(Self {
            dir: Some(dir.to_owned()),
            entries: RwLock::new(entries),
            ..Self::default()
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<Arc<str>> {
        let hit = self.entries.read().expect("cache lock").get(key).cloned();
        let counter = if hit.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        hit
    }

    /// Stores `value` and appends it to the identity's segment. Concurrent
    /// writers of the same key race harmlessly; the last write wins.
    pub fn put(&self, key: CacheKey, value: String) -> Result<(), CacheError> {
        if let Some(dir) = &self.dir {
            let line = serde_json::to_string(&SegmentLine {
                identity: key.identity.clone(),
                op: key.op.clone(),
                key: key.content_hash.clone(),
                value: value.clone(),
            })
            .expect("segment line serializes");
            let mut writers = self.writers.lock().expect("cache lock");
            let path = dir.join(SEGMENT_DIR).join(segment_name(&key.identity));
            let file = match writers.entry(key.identity.clone()) {
                std::collections::hash_map::Entry::Occupied(o) => o.into_mut(),
                std::collections::hash_map::Entry::Vacant(v) => {
                    let f = OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(&path)
                        .map_err(io_err(&path))?;
                    v.insert(f)
                }
            };
            file.write_all(format!("{line}\n").as_bytes()).map_err(io_err(&path))?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(key, Arc::from(value));
        Ok(())
    }

    /// Returns the cached value or computes, stores and returns it.
    pub fn get_or_try_insert<T, E>(
        &self,
        key: CacheKey,
        compute: impl FnOnce() -> Result<T, E>,
    ) -> Result<T, E>
    where
        T: Serialize + DeserializeOwned,
    {
        if let Some(v) = self.get(&key) {
            match serde_json::from_str(&v) {
                Ok(t) => return Ok(t),
                Err(e) => log::warn!("discarding undecodable cache entry {}/{}: {e}", key.identity, key.op),
            }
        }
        let value = compute()?;
        let text = serde_json::to_string(&value).expect("cache values serialize");
        if let Err(e) = self.put(key, text) {
            log::warn!("cache write failed: {e}");
        }
        Ok(value)
    }

    pub fn counters(&self) -> RunCounters {
        RunCounters {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    fn index(&self) -> Vec<IndexEntry> {
        let mut per: BTreeMap<&str, usize> = BTreeMap::new();
        let entries = self.entries.read().expect("cache lock");
        for k in entries.keys() {
            *per.entry(k.identity.as_str()).or_default() += 1;
        }
        per.into_iter()
            .map(|(identity, n)| IndexEntry {
                identity: identity.to_owned(),
                file: format!("{SEGMENT_DIR}/{}", segment_name(identity)),
                entries: n,
            })
            .collect()
    }

    pub fn stats(&self) -> CacheStats {
        let c = self.counters();
        CacheStats {
            entries: self.len(),
            hits: c.hits,
            misses: c.misses,
            segments: self.index(),
        }
    }

    /// Syncs segments and writes the index and the run counters.
    pub fn flush(&self) -> Result<(), CacheError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        for f in self.writers.lock().expect("cache lock").values() {
            let _ = f.sync_data();
        }
        let index = dir.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(&self.index()).expect("index serializes");
        fs::write(&index, text).map_err(io_err(&index))?;
        let last = dir.join(LAST_RUN_FILE);
        let text = serde_json::to_string(&self.counters()).expect("counters serialize");
        fs::write(&last, text).map_err(io_err(&last))?;
        Ok(())
    }

    /// Counters recorded by the most recent flushed run in `dir`.
    pub fn last_run(dir: &Path) -> Option<RunCounters> {
        let text = fs::read_to_string(dir.join(LAST_RUN_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Deletes the cache contents under `dir`.
    pub fn purge(dir: &Path) -> Result<(), CacheError> {
        for name in [SEGMENT_DIR, INDEX_FILE, LAST_RUN_FILE] {
            let p = dir.join(name);
            let res = if p.is_dir() {
                fs::remove_dir_all(&p)
            } else if p.exists() {
                fs::remove_file(&p)
            } else {
                Ok(())
            };
            res.map_err(io_err(&p))?;
        }
        Ok(())
    }
}

pub(crate) fn image_queries_hash(image: &ImageRef, queries: &[String]) -> String {
    parts_hash(
        [image.id.as_str(), image.uri.as_str()]
            .into_iter()
            .chain(queries.iter().map(String::as_str)),
    )
}

struct CachedParser {
    inner: Arc<dyn CaptionParser>,
    cache: Arc<ScoreCache>,
}

impl CaptionParser for CachedParser {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn parse(&self, req: &ParseRequest) -> Result<Vec<String>, BackendError> {
        let key = CacheKey::new(
            &self.descriptor().identity,
            "parse",
            parts_hash([req.prompt_id.as_str(), req.caption.as_str()]),
        );
        self.cache.get_or_try_insert(key, || self.inner.parse(req))
    }
}

struct CachedDetector {
    inner: Arc<dyn Detector>,
    cache: Arc<ScoreCache>,
}

impl Detector for CachedDetector {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn detect(&self, image: &ImageRef, queries: &[String]) -> Result<Vec<DetectionQueryResult>, BackendError> {
        let key = CacheKey::new(&self.descriptor().identity, "detect", image_queries_hash(image, queries));
        self.cache.get_or_try_insert(key, || self.inner.detect(image, queries))
    }
}

struct CachedSegmenter {
    inner: Arc<dyn Segmenter>,
    cache: Arc<ScoreCache>,
}

impl Segmenter for CachedSegmenter {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn segment(
        &self,
        image: &ImageRef,
        queries: &[String],
    ) -> Result<Vec<SegmentationQueryResult>, BackendError> {
        let key = CacheKey::new(&self.descriptor().identity, "segment", image_queries_hash(image, queries));
        self.cache.get_or_try_insert(key, || self.inner.segment(image, queries))
    }
}

/// Caches per text, so a batch only sends the texts it has not seen.
struct CachedEmbedder {
    inner: Arc<dyn Embedder>,
    cache: Arc<ScoreCache>,
}

impl Embedder for CachedEmbedder {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let identity = &self.descriptor().identity;
        let keys: Vec<CacheKey> = texts
            .iter()
            .map(|t| CacheKey::new(identity, "embed", text_hash(t)))
            .collect();
        let mut out: Vec<Option<Vec<f64>>> = keys
            .iter()
            .map(|k| self.cache.get(k).and_then(|v| serde_json::from_str(&v).ok()))
            .collect();
        let mut missing: Vec<usize> = Vec::new();
        for (i, slot) in out.iter().enumerate() {
            if slot.is_none() && !missing.iter().any(|&m| texts[m] == texts[i]) {
                missing.push(i);
            }
        }
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.embed(&batch)?;
            if fresh.len() != batch.len() {
                return Err(BackendError::Protocol(format!(
                    "expected {} vectors, got {}",
                    batch.len(),
                    fresh.len()
                )));
            }
            for (&i, v) in missing.iter().zip(fresh) {
                let text = serde_json::to_string(&v).expect("vector serializes");
                if let Err(e) = self.cache.put(keys[i].clone(), text) {
                    log::warn!("cache write failed: {e}");
                }
                for (j, slot) in out.iter_mut().enumerate() {
                    if slot.is_none() && texts[j] == texts[i] {
                        *slot = Some(v.clone());
                    }
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every slot filled")).collect())
    }
}

/// Wraps every backend so responses are served from and stored in `cache`.
pub fn cached_backends(backends: &Backends, cache: Arc<ScoreCache>) -> Backends {
    Backends {
        parser: Arc::new(CachedParser {
            inner: backends.parser.clone(),
            cache: cache.clone(),
        }),
        detector: Arc::new(CachedDetector {
            inner: backends.detector.clone(),
            cache: cache.clone(),
        }),
        segmenter: backends.segmenter.clone().map(|inner| {
            Arc::new(CachedSegmenter {
                inner,
                cache: cache.clone(),
            }) as Arc<dyn Segmenter>
        }),
        embedder: Arc::new(CachedEmbedder {
            inner: backends.embedder.clone(),
            cache,
        }),
    }
}
