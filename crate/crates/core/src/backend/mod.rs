//! Contracts for the four neural tools the scorer depends on: a caption
//! parser, an open-vocabulary detector, an open-vocabulary segmenter and a
//! text embedder.
//!
//! Each tool has a remote JSON-over-HTTP client ([`remote`]) and a
//! deterministic fixture replay backend ([`fixture`]). Callers should go
//! through the free functions in this module ([`parse_caption`], [`detect`],
//! [`segment`], [`embed_texts`]) rather than the trait methods directly: they
//! enforce query preconditions, response alignment and embedding
//! normalization regardless of which implementation sits behind the trait.

pub mod fixture;
pub mod prompt;
pub mod remote;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EmbeddingVector, ImageRef};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend reported error: {message}")]
    Remote { message: String, retryable: bool },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("no fixture entry for {kind} key {key}")]
    FixtureMiss { kind: BackendKind, key: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("cannot decode image {uri}: {reason}")]
    ImageDecode { uri: String, reason: String },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Remote { retryable, .. } => *retryable,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Parser,
    Detector,
    Segmenter,
    Embedder,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Parser => "parser",
            BackendKind::Detector => "detector",
            BackendKind::Segmenter => "segmenter",
            BackendKind::Embedder => "embedder",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendImpl {
    Remote,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(rename = "impl")]
    pub implementation: BackendImpl,
    /// Model name and version; part of every cache key.
    pub identity: String,
}

impl BackendDescriptor {
    pub fn new(kind: BackendKind, implementation: BackendImpl, identity: impl Into<String>) -> Self {
        let identity = identity.into();
        assert!(!identity.is_empty(), "backend identity must be non-empty");
        Self {
            kind,
            implementation,
            identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParseRequest {
    pub caption: String,
    pub prompt_id: String,
}

impl ParseRequest {
    pub fn new(caption: impl Into<String>, prompt_id: impl Into<String>) -> Self {
        Self {
            caption: caption.into(),
            prompt_id: prompt_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionQueryResult {
    pub query: String,
    pub max_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationQueryResult {
    pub query: String,
    pub confidence: f64,
    pub coverage: f64,
}

pub trait CaptionParser: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;
    fn parse(&self, req: &ParseRequest) -> Result<Vec<String>, BackendError>;
}

pub trait Detector: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;
    fn detect(&self, image: &ImageRef, queries: &[String]) -> Result<Vec<DetectionQueryResult>, BackendError>;
}

pub trait Segmenter: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;
    fn segment(
        &self,
        image: &ImageRef,
        queries: &[String],
    ) -> Result<Vec<SegmentationQueryResult>, BackendError>;
}

/// Returns raw, possibly unnormalized vectors.
pub trait Embedder: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// The tool set a scorer runs against. The segmenter is optional; without it
/// grounding uses detection alone.
#[derive(Clone)]
pub struct Backends {
    pub parser: Arc<dyn CaptionParser>,
    pub detector: Arc<dyn Detector>,
    pub segmenter: Option<Arc<dyn Segmenter>>,
    pub embedder: Arc<dyn Embedder>,
}

impl Backends {
    pub fn descriptors(&self) -> Vec<BackendDescriptor> {
        let mut out = vec![self.parser.descriptor().clone(), self.detector.descriptor().clone()];
        if let Some(s) = &self.segmenter {
            out.push(s.descriptor().clone());
        }
        out.push(self.embedder.descriptor().clone());
        out
    }

    pub fn without_segmenter(&self) -> Backends {
        Backends {
            segmenter: None,
            ..self.clone()
        }
    }
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.descriptors()).finish()
    }
}

pub fn parse_caption(parser: &dyn CaptionParser, req: &ParseRequest) -> Result<Vec<String>, BackendError> {
    if req.caption.trim().is_empty() {
        return Err(BackendError::Precondition("caption is empty".into()));
    }
    parser.parse(req)
}

fn check_queries(queries: &[String]) -> Result<(), BackendError> {
    if queries.is_empty() {
        return Err(BackendError::Precondition("query list is empty".into()));
    }
    let mut seen = HashSet::with_capacity(queries.len());
    for q in queries {
        if !seen.insert(q.as_str()) {
            return Err(BackendError::Precondition(format!("duplicate query {q:?}")));
        }
    }
    Ok(())
}

fn check_aligned<'a>(queries: &[String], got: impl ExactSizeIterator<Item = &'a str>) -> Result<(), BackendError> {
    if got.len() != queries.len() {
        return Err(BackendError::Protocol(format!(
            "expected {} results, got {}",
            queries.len(),
            got.len()
        )));
    }
    for (i, (q, r)) in queries.iter().zip(got).enumerate() {
        if q != r {
            return Err(BackendError::Protocol(format!(
                "result {i} answers {r:?}, expected {q:?}"
            )));
        }
    }
    Ok(())
}

fn check_unit(kind: &str, query: &str, v: f64) -> Result<(), BackendError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(BackendError::Protocol(format!("{kind} for {query:?} out of [0,1]: {v}")));
    }
    Ok(())
}

pub fn detect(
    detector: &dyn Detector,
    image: &ImageRef,
    queries: &[String],
) -> Result<Vec<DetectionQueryResult>, BackendError> {
    check_queries(queries)?;
    let results = detector.detect(image, queries)?;
    check_aligned(queries, results.iter().map(|r| r.query.as_str()))?;
    for r in &results {
        check_unit("confidence", &r.query, r.max_confidence)?;
    }
    Ok(results)
}

pub fn segment(
    segmenter: &dyn Segmenter,
    image: &ImageRef,
    queries: &[String],
) -> Result<Vec<SegmentationQueryResult>, BackendError> {
    check_queries(queries)?;
    let results = segmenter.segment(image, queries)?;
    check_aligned(queries, results.iter().map(|r| r.query.as_str()))?;
    for r in &results {
        check_unit("confidence", &r.query, r.confidence)?;
        check_unit("coverage", &r.query, r.coverage)?;
    }
    Ok(results)
}

/// Embeds and L2-normalizes. Every returned vector has the same dimension.
pub fn embed_texts(embedder: &dyn Embedder, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
    if texts.is_empty() {
        return Err(BackendError::Precondition("no texts to embed".into()));
    }
    let raw = embedder.embed(texts)?;
    if raw.len() != texts.len() {
        return Err(BackendError::Protocol(format!(
            "expected {} vectors, got {}",
            texts.len(),
            raw.len()
        )));
    }
    let dim = raw[0].len();
    raw.into_iter()
        .zip(texts)
        .map(|(v, text)| {
            if v.len() != dim {
                return Err(BackendError::Protocol(format!(
                    "vector for {text:?} has dim {}, batch dim is {dim}",
                    v.len()
                )));
            }
            EmbeddingVector::normalized(v)
                .map_err(|e| BackendError::Protocol(format!("vector for {text:?}: {e}")))
        })
        .collect()
}

/// Rejects local image paths that exist but hold no bytes. Remote URIs are
/// passed through untouched.
pub fn check_image_uri(image: &ImageRef) -> Result<(), BackendError> {
    let uri = &image.uri;
    if uri.contains("://") && !uri.starts_with("file://") {
        return Ok(());
    }
    let path = Path::new(uri.strip_prefix("file://").unwrap_or(uri));
    match std::fs::metadata(path) {
        Ok(meta) if meta.is_file() && meta.len() == 0 => Err(BackendError::ImageDecode {
            uri: uri.clone(),
            reason: "file is empty".into(),
        }),
        _ => Ok(()),
    }
}
