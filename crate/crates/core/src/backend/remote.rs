//! JSON-over-HTTP clients for remotely hosted tools.
//!
//! All endpoints are `POST`:
//!
//! ```text
//! /v1/parse    {"caption", "prompt_id"}        -> {"entities": [{"surface"}]}
//! /v1/detect   {"image_uri", "queries"}        -> {"results": [{"query", "max_confidence"}]}
//! /v1/segment  {"image_uri", "queries"}        -> {"results": [{"query", "confidence", "coverage"}]}
//! /v1/embed    {"texts"}                       -> {"vectors": [[float]], "dim"}
//! ```
//!
//! Non-2xx responses carry `{"error": str, "retryable": bool}`.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::fixture::SurfaceRecord;
use super::{
    BackendDescriptor, BackendError, BackendImpl, BackendKind, CaptionParser, DetectionQueryResult, Detector,
    Embedder, ParseRequest, SegmentationQueryResult, Segmenter,
};
use crate::model::ImageRef;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://localhost:8080`.
    pub endpoint: String,
    /// Model name and version reported in the backend identity.
    pub model: String,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            max_in_flight: 8,
            max_retries: 3,
            initial_backoff_ms: 200,
            timeout_ms: 60_000,
        }
    }
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            ..Self::default()
        }
    }
}

#[derive(Debug)]
struct Gate {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn enter(&self) -> GatePass<'_> {
        let mut n = self.in_flight.lock().expect("gate poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("gate poisoned");
        }
        *n += 1;
        GatePass(self)
    }
}

struct GatePass<'a>(&'a Gate);

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("gate poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
    #[serde(default)]
    retryable: bool,
}

/// Shared HTTP plumbing: bounded in-flight requests and retry with
/// exponential backoff on retryable failures.
#[derive(Debug)]
pub struct RemoteClient {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        let gate = Gate::new(cfg.max_in_flight);
        Self { cfg, agent, gate }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.endpoint.trim_end_matches('/'), path)
    }

    fn post_once<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let _pass = self.gate.enter();
        let mut resp = self
            .agent
            .post(&self.url(path))
            .send_json(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(match serde_json::from_str::<ErrorBody>(&text) {
                Ok(b) => BackendError::Remote {
                    message: format!("{status}: {}", b.error),
                    retryable: b.retryable,
                },
                Err(_) => BackendError::Remote {
                    message: format!("{status}: {text}"),
                    retryable: status.is_server_error(),
                },
            });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("{path}: {e}")))
    }

    pub fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let mut backoff = Duration::from_millis(self.cfg.initial_backoff_ms);
        let mut attempt = 0;
        loop {
            match self.post_once(path, body) {
                Err(e) if e.is_retryable() && attempt < self.cfg.max_retries => {
                    log::warn!("{path} attempt {} failed: {e}; retrying in {backoff:?}", attempt + 1);
                    thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn descriptor(&self, kind: BackendKind, extra: &str) -> BackendDescriptor {
        let model = if self.cfg.model.is_empty() {
            self.cfg.endpoint.as_str()
        } else {
            self.cfg.model.as_str()
        };
        BackendDescriptor::new(kind, BackendImpl::Remote, format!("remote-{kind}:{model}{extra}"))
    }
}

#[derive(Serialize)]
struct ParseBody<'a> {
    caption: &'a str,
    prompt_id: &'a str,
    temperature: f64,
}

#[derive(Deserialize)]
struct ParseResponse {
    entities: Vec<SurfaceRecord>,
}

#[derive(Serialize)]
struct GroundBody<'a> {
    image_uri: &'a str,
    queries: &'a [String],
}

#[derive(Deserialize)]
struct DetectResponse {
    results: Vec<DetectionQueryResult>,
}

#[derive(Deserialize)]
struct SegmentResponse {
    results: Vec<SegmentationQueryResult>,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

/// Always requests greedy decoding; the identity records it.
#[derive(Debug)]
pub struct RemoteParser {
    client: RemoteClient,
    desc: BackendDescriptor,
}

impl RemoteParser {
    pub fn new(cfg: RemoteConfig) -> Self {
        let client = RemoteClient::new(cfg);
        let desc = client.descriptor(BackendKind::Parser, ";temperature=0");
        Self { client, desc }
    }
}

impl CaptionParser for RemoteParser {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn parse(&self, req: &ParseRequest) -> Result<Vec<String>, BackendError> {
        let body = ParseBody {
            caption: &req.caption,
            prompt_id: &req.prompt_id,
            temperature: 0.0,
        };
        let resp: ParseResponse = self.client.post("/v1/parse", &body)?;
        Ok(resp.entities.into_iter().map(|e| e.surface).collect())
    }
}

#[derive(Debug)]
pub struct RemoteDetector {
    client: RemoteClient,
    desc: BackendDescriptor,
}

impl RemoteDetector {
    pub fn new(cfg: RemoteConfig) -> Self {
        let client = RemoteClient::new(cfg);
        let desc = client.descriptor(BackendKind::Detector, "");
        Self { client, desc }
    }
}

impl Detector for RemoteDetector {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn detect(&self, image: &ImageRef, queries: &[String]) -> Result<Vec<DetectionQueryResult>, BackendError> {
        let body = GroundBody {
            image_uri: &image.uri,
            queries,
        };
        let resp: DetectResponse = self.client.post("/v1/detect", &body)?;
        Ok(resp.results)
    }
}

#[derive(Debug)]
pub struct RemoteSegmenter {
    client: RemoteClient,
    desc: BackendDescriptor,
}

impl RemoteSegmenter {
    pub fn new(cfg: RemoteConfig) -> Self {
        let client = RemoteClient::new(cfg);
        let desc = client.descriptor(BackendKind::Segmenter, "");
        Self { client, desc }
    }
}

impl Segmenter for RemoteSegmenter {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn segment(
        &self,
        image: &ImageRef,
        queries: &[String],
    ) -> Result<Vec<SegmentationQueryResult>, BackendError> {
        let body = GroundBody {
            image_uri: &image.uri,
            queries,
        };
        let resp: SegmentResponse = self.client.post("/v1/segment", &body)?;
        Ok(resp.results)
    }
}

#[derive(Debug)]
pub struct RemoteEmbedder {
    client: RemoteClient,
    desc: BackendDescriptor,
}

impl RemoteEmbedder {
    pub fn new(cfg: RemoteConfig) -> Self {
        let client = RemoteClient::new(cfg);
        let desc = client.descriptor(BackendKind::Embedder, "");
        Self { client, desc }
    }
}

impl Embedder for RemoteEmbedder {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let resp: EmbedResponse = self.client.post("/v1/embed", &EmbedBody { texts })?;
        if let Some(v) = resp.vectors.iter().find(|v| v.len() != resp.dim) {
            return Err(BackendError::Protocol(format!(
                "declared dim {} but got a vector of length {}",
                resp.dim,
                v.len()
            )));
        }
        Ok(resp.vectors)
    }
}
