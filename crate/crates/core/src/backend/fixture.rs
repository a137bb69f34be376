//! Deterministic replay backends backed by JSONL fixture tables.
//!
//! File schemas, one record per key:
//!
//! ```text
//! parser.jsonl     {"key": sha256(caption), "caption"?: str, "entities": [{"surface": str}]}
//! detector.jsonl   {"image_id": str, "results": [{"query": str, "max_confidence": float}]}
//! segmenter.jsonl  {"image_id": str, "results": [{"query": str, "confidence": float, "coverage": float}]}
//! embedder.jsonl   {"key": sha256(text), "text"?: str, "vector": [float]}
//! ```
//!
//! `key` may be omitted when the plain `caption` / `text` is given. A caption,
//! image or text absent from the table is a [`BackendError::FixtureMiss`].
//! Within a known image, a query without an entry scores zero.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    check_image_uri, BackendDescriptor, BackendError, BackendImpl, BackendKind, Backends, CaptionParser,
    DetectionQueryResult, Detector, Embedder, ParseRequest, SegmentationQueryResult, Segmenter,
};
use crate::hashing::text_hash;
use crate::model::{fold_phrase, ImageRef};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixture file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub const PARSER_FILE: &str = "parser.jsonl";
pub const DETECTOR_FILE: &str = "detector.jsonl";
pub const SEGMENTER_FILE: &str = "segmenter.jsonl";
pub const EMBEDDER_FILE: &str = "embedder.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceRecord {
    pub surface: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParserFixtureRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    pub entities: Vec<SurfaceRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorFixtureRecord {
    pub image_id: String,
    pub results: Vec<DetectionQueryResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmenterFixtureRecord {
    pub image_id: String,
    pub results: Vec<SegmentationQueryResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedderFixtureRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub vector: Vec<f64>,
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, FixtureError> {
    let file = fs::File::open(path).map_err(|source| FixtureError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| FixtureError::Io {
            path: path.to_owned(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| FixtureError::Record {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn missing_key(path: &Path, line: usize, what: &str) -> FixtureError {
    FixtureError::Record {
        path: path.to_owned(),
        line,
        message: format!("record needs either `key` or `{what}`"),
    }
}

/// Shared call accounting and optional simulated latency.
#[derive(Debug, Default)]
struct Meter {
    calls: AtomicUsize,
    latency: Option<Duration>,
}

impl Meter {
    fn tick(&self) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
    }
}

fn identity(kind: BackendKind, content: &str) -> BackendDescriptor {
    BackendDescriptor::new(
        kind,
        BackendImpl::Fixture,
        format!("fixture-{kind}@{}", &text_hash(content)[..16]),
    )
}

macro_rules! meter_accessors {
    () => {
        /// Number of requests served so far.
        pub fn calls(&self) -> usize {
            self.meter.calls.load(Ordering::Relaxed)
        }

        /// Sleeps for `latency` on every request; used to mimic remote tools.
        pub fn with_latency(mut self, latency: Duration) -> Self {
            self.meter.latency = Some(latency);
            self
        }
    };
}

#[derive(Debug)]
pub struct FixtureParser {
    desc: BackendDescriptor,
    table: HashMap<String, Vec<String>>,
    meter: Meter,
}

impl FixtureParser {
    pub fn from_pairs<I, C, E, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (C, E)>,
        C: AsRef<str>,
        E: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let table: HashMap<String, Vec<String>> = pairs
            .into_iter()
            .map(|(c, es)| (text_hash(c.as_ref()), es.into_iter().map(Into::into).collect()))
            .collect();
        Self::from_table(table)
    }

    fn from_table(table: HashMap<String, Vec<String>>) -> Self {
        let mut keys: Vec<_> = table.iter().collect();
        keys.sort();
        let content = serde_json::to_string(&keys).expect("serializable");
        Self {
            desc: identity(BackendKind::Parser, &content),
            table,
            meter: Meter::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let mut table = HashMap::new();
        for (i, rec) in read_records::<ParserFixtureRecord>(path)?.into_iter().enumerate() {
            let key = match (rec.key, rec.caption) {
                (Some(k), _) => k,
                (None, Some(c)) => text_hash(&c),
                (None, None) => return Err(missing_key(path, i + 1, "caption")),
            };
            table.insert(key, rec.entities.into_iter().map(|e| e.surface).collect());
        }
        Ok(Self::from_table(table))
    }

    meter_accessors!();
}

impl CaptionParser for FixtureParser {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn parse(&self, req: &ParseRequest) -> Result<Vec<String>, BackendError> {
        self.meter.tick();
        let key = text_hash(&req.caption);
        self.table.get(&key).cloned().ok_or(BackendError::FixtureMiss {
            kind: BackendKind::Parser,
            key,
        })
    }
}

#[derive(Debug)]
pub struct FixtureDetector {
    desc: BackendDescriptor,
    images: HashMap<String, HashMap<String, f64>>,
    meter: Meter,
}

impl FixtureDetector {
    pub fn from_images<I, Q, S>(images: I) -> Self
    where
        I: IntoIterator<Item = (S, Q)>,
        Q: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let images = images
            .into_iter()
            .map(|(id, qs)| {
                (
                    id.into(),
                    qs.into_iter().map(|(q, s)| (fold_phrase(&q.into()), s)).collect(),
                )
            })
            .collect();
        Self::from_table(images)
    }

    fn from_table(images: HashMap<String, HashMap<String, f64>>) -> Self {
        Self {
            desc: identity(BackendKind::Detector, &canonical_table(&images)),
            images,
            meter: Meter::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let images = read_records::<DetectorFixtureRecord>(path)?
            .into_iter()
            .map(|rec| {
                let qs = rec
                    .results
                    .into_iter()
                    .map(|r| (fold_phrase(&r.query), r.max_confidence))
                    .collect();
                (rec.image_id, qs)
            })
            .collect();
        Ok(Self::from_table(images))
    }

    meter_accessors!();
}

fn canonical_table<V: Serialize>(table: &HashMap<String, HashMap<String, V>>) -> String {
    let mut outer: Vec<_> = table
        .iter()
        .map(|(k, inner)| {
            let mut inner: Vec<_> = inner.iter().collect();
            inner.sort_by(|a, b| a.0.cmp(b.0));
            (k, inner)
        })
        .collect();
    outer.sort_by(|a, b| a.0.cmp(b.0));
    serde_json::to_string(&outer).expect("serializable")
}

impl Detector for FixtureDetector {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn detect(&self, image: &ImageRef, queries: &[String]) -> Result<Vec<DetectionQueryResult>, BackendError> {
        self.meter.tick();
        check_image_uri(image)?;
        let scene = self.images.get(&image.id).ok_or_else(|| BackendError::FixtureMiss {
            kind: BackendKind::Detector,
            key: image.id.clone(),
        })?;
        Ok(queries
            .iter()
            .map(|q| DetectionQueryResult {
                query: q.clone(),
                max_confidence: scene.get(&fold_phrase(q)).copied().unwrap_or(0.0),
            })
            .collect())
    }
}

#[derive(Debug)]
pub struct FixtureSegmenter {
    desc: BackendDescriptor,
    images: HashMap<String, HashMap<String, (f64, f64)>>,
    meter: Meter,
}

impl FixtureSegmenter {
    /// Entries are `(query, (confidence, coverage))`.
    pub fn from_images<I, Q, S>(images: I) -> Self
    where
        I: IntoIterator<Item = (S, Q)>,
        Q: IntoIterator<Item = (S, (f64, f64))>,
        S: Into<String>,
    {
        let images = images
            .into_iter()
            .map(|(id, qs)| {
                (
                    id.into(),
                    qs.into_iter().map(|(q, s)| (fold_phrase(&q.into()), s)).collect(),
                )
            })
            .collect();
        Self::from_table(images)
    }

    fn from_table(images: HashMap<String, HashMap<String, (f64, f64)>>) -> Self {
        Self {
            desc: identity(BackendKind::Segmenter, &canonical_table(&images)),
            images,
            meter: Meter::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let images = read_records::<SegmenterFixtureRecord>(path)?
            .into_iter()
            .map(|rec| {
                let qs = rec
                    .results
                    .into_iter()
                    .map(|r| (fold_phrase(&r.query), (r.confidence, r.coverage)))
                    .collect();
                (rec.image_id, qs)
            })
            .collect();
        Ok(Self::from_table(images))
    }

    meter_accessors!();
}

impl Segmenter for FixtureSegmenter {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn segment(
        &self,
        image: &ImageRef,
        queries: &[String],
    ) -> Result<Vec<SegmentationQueryResult>, BackendError> {
        self.meter.tick();
        check_image_uri(image)?;
        let scene = self.images.get(&image.id).ok_or_else(|| BackendError::FixtureMiss {
            kind: BackendKind::Segmenter,
            key: image.id.clone(),
        })?;
        Ok(queries
            .iter()
            .map(|q| {
                let (confidence, coverage) = scene.get(&fold_phrase(q)).copied().unwrap_or((0.0, 0.0));
                SegmentationQueryResult {
                    query: q.clone(),
                    confidence,
                    coverage,
                }
            })
            .collect())
    }
}

#[derive(Debug)]
pub struct FixtureEmbedder {
    desc: BackendDescriptor,
    table: HashMap<String, Vec<f64>>,
    meter: Meter,
}

impl FixtureEmbedder {
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let table = pairs
            .into_iter()
            .map(|(t, v)| (text_hash(t.as_ref()), v))
            .collect();
        Self::from_table(table)
    }

    fn from_table(table: HashMap<String, Vec<f64>>) -> Self {
        let mut entries: Vec<_> = table.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        let content = serde_json::to_string(&entries).expect("serializable");
        Self {
            desc: identity(BackendKind::Embedder, &content),
            table,
            meter: Meter::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let mut table = HashMap::new();
        for (i, rec) in read_records::<EmbedderFixtureRecord>(path)?.into_iter().enumerate() {
            let key = match (rec.key, rec.text) {
                (Some(k), _) => k,
                (None, Some(t)) => text_hash(&t),
                (None, None) => return Err(missing_key(path, i + 1, "text")),
            };
            table.insert(key, rec.vector);
        }
        Ok(Self::from_table(table))
    }

    meter_accessors!();
}

impl Embedder for FixtureEmbedder {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        self.meter.tick();
        texts
            .iter()
            .map(|t| {
                let key = text_hash(t);
                self.table.get(&key).cloned().ok_or(BackendError::FixtureMiss {
                    kind: BackendKind::Embedder,
                    key: format!("{key} ({t:?})"),
                })
            })
            .collect()
    }
}

/// The four fixture backends with handles kept for call accounting.
#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub parser: Arc<FixtureParser>,
    pub detector: Arc<FixtureDetector>,
    pub segmenter: Arc<FixtureSegmenter>,
    pub embedder: Arc<FixtureEmbedder>,
}

impl FixtureSet {
    pub fn new(
        parser: FixtureParser,
        detector: FixtureDetector,
        segmenter: FixtureSegmenter,
        embedder: FixtureEmbedder,
    ) -> Self {
        Self {
            parser: Arc::new(parser),
            detector: Arc::new(detector),
            segmenter: Arc::new(segmenter),
            embedder: Arc::new(embedder),
        }
    }

    /// Loads `parser.jsonl`, `detector.jsonl`, `segmenter.jsonl` and `embedder.jsonl` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, FixtureError> {
        Ok(Self::new(
            FixtureParser::load(&dir.join(PARSER_FILE))?,
            FixtureDetector::load(&dir.join(DETECTOR_FILE))?,
            FixtureSegmenter::load(&dir.join(SEGMENTER_FILE))?,
            FixtureEmbedder::load(&dir.join(EMBEDDER_FILE))?,
        ))
    }

    pub fn backends(&self) -> Backends {
        Backends {
            parser: self.parser.clone(),
            detector: self.detector.clone(),
            segmenter: Some(self.segmenter.clone()),
            embedder: self.embedder.clone(),
        }
    }

    pub fn total_calls(&self) -> usize {
        self.parser.calls() + self.detector.calls() + self.segmenter.calls() + self.embedder.calls()
    }
}
