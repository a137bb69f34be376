//! Run configuration as read from a JSON file; command-line flags override
//! individual fields after loading.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::fixture::{FixtureError, FixtureSet};
use crate::backend::remote::{RemoteConfig, RemoteDetector, RemoteEmbedder, RemoteParser, RemoteSegmenter};
use crate::backend::Backends;
use crate::grounding::GroundingConfig;
use crate::model::ReferenceMode;
use crate::pipeline::{PipelineOptions, SelectionStrategy};
use crate::scoring::{RecallOptions, ReferenceSetSpec, ScoringConfig};
use crate::vocabulary::{build_vocabulary, Vocabulary, VocabularyError};

#[derive(Debug, Error)]
pub enum RunConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Vocabulary(#[from] VocabularyError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub parser: Option<String>,
    pub detector: Option<String>,
    pub segmenter: Option<String>,
    pub embedder: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// Directory of fixture JSONL files; takes precedence over endpoints.
    pub fixtures_dir: Option<PathBuf>,
    pub endpoints: EndpointConfig,
    /// Template for every remote client; `endpoint` is filled per tool.
    pub remote: RemoteConfig,
    pub use_segmenter: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            fixtures_dir: None,
            endpoints: EndpointConfig::default(),
            remote: RemoteConfig::default(),
            use_segmenter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: SelectionStrategy,
    pub data_ratio: f64,
    pub grounding: GroundingConfig,
    pub reference_mode: ReferenceMode,
    /// Concept-list files whose union forms the vocabulary.
    pub vocabulary: Vec<PathBuf>,
    pub prompt_id: String,
    pub recall: RecallOptions,
    pub backends: BackendConfig,
    pub cache_dir: Option<PathBuf>,
    pub concurrency: usize,
    pub failure_ceiling: f64,
    pub chunk_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scoring = ScoringConfig::default();
        let options = PipelineOptions::default();
        Self {
            strategy: SelectionStrategy::default(),
            data_ratio: 0.5,
            grounding: scoring.grounding,
            reference_mode: scoring.reference.mode,
            vocabulary: Vec::new(),
            prompt_id: scoring.prompt_id,
            recall: scoring.recall,
            backends: BackendConfig::default(),
            cache_dir: None,
            concurrency: options.concurrency,
            failure_ceiling: options.failure_ceiling,
            chunk_size: options.chunk_size,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, RunConfigError> {
        let read_err = |message: String| RunConfigError::Read {
            path: path.to_owned(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), RunConfigError> {
        let invalid = |m: String| Err(RunConfigError::Invalid(m));
        self.grounding.validate().map_err(|e| RunConfigError::Invalid(e.to_string()))?;
        self.strategy.validate().map_err(RunConfigError::Invalid)?;
        if !(self.data_ratio > 0.0 && self.data_ratio <= 1.0) {
            return invalid(format!("data_ratio must be in (0, 1], got {}", self.data_ratio));
        }
        if self.concurrency == 0 {
            return invalid("concurrency must be at least 1".into());
        }
        if self.reference_mode == ReferenceMode::FromVocabularyGrounding && self.vocabulary.is_empty() {
            return invalid("reference mode from_vocabulary_grounding requires vocabulary files".into());
        }
        if self.strategy.kind.needs_vocabulary() && self.vocabulary.is_empty() {
            return invalid(format!("strategy {} requires vocabulary files", self.strategy.kind.name()));
        }
        Ok(())
    }

    pub fn load_vocabulary(&self) -> Result<Option<Arc<Vocabulary>>, RunConfigError> {
        if self.vocabulary.is_empty() {
            return Ok(None);
        }
        Ok(Some(Arc::new(build_vocabulary(&self.vocabulary)?)))
    }

    pub fn scoring_config(&self, vocabulary: Option<Arc<Vocabulary>>) -> ScoringConfig {
        let reference = match (self.reference_mode, vocabulary) {
            (ReferenceMode::FromVocabularyGrounding, Some(v)) => ReferenceSetSpec::from_vocabulary(v),
            (mode, _) => ReferenceSetSpec {
                mode,
                vocabulary: None,
            },
        };
        ScoringConfig {
            grounding: self.grounding.clone(),
            reference,
            prompt_id: self.prompt_id.clone(),
            recall: self.recall,
        }
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            concurrency: self.concurrency,
            failure_ceiling: self.failure_ceiling,
            chunk_size: self.chunk_size,
        }
    }

    /// Fixture backends when a fixture directory is configured, otherwise
    /// remote clients; the fixture set is returned so callers can read its
    /// call counters.
    pub fn build_backends(&self) -> Result<(Backends, Option<FixtureSet>), RunConfigError> {
        let cfg = &self.backends;
        if let Some(dir) = &cfg.fixtures_dir {
            let set = FixtureSet::load_dir(dir)?;
            let mut b = set.backends();
            if !cfg.use_segmenter {
                b = b.without_segmenter();
            }
            return Ok((b, Some(set)));
        }
        let ep = &cfg.endpoints;
        let need = |name: &str, v: &Option<String>| {
            v.clone().ok_or_else(|| {
                RunConfigError::Invalid(format!("no fixtures directory and no endpoint for the {name}"))
            })
        };
        let remote = |endpoint: String| RemoteConfig {
            endpoint,
            ..cfg.remote.clone()
        };
        let parser = need("parser", &ep.parser)?;
        let detector = need("detector", &ep.detector)?;
        let embedder = need("embedder", &ep.embedder)?;
        let segmenter = match (&ep.segmenter, cfg.use_segmenter) {
            (Some(s), true) => Some(Arc::new(RemoteSegmenter::new(remote(s.clone()))) as _),
            (None, true) => {
                return Err(RunConfigError::Invalid(
                    "no endpoint for the segmenter (disable it with use_segmenter: false)".into(),
                ))
            }
            (_, false) => None,
        };
        Ok((
            Backends {
                parser: Arc::new(RemoteParser::new(remote(parser))),
                detector: Arc::new(RemoteDetector::new(remote(detector))),
                segmenter,
                embedder: Arc::new(RemoteEmbedder::new(remote(embedder))),
            },
            None,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::StrategyKind;

    #[test]
    fn defaults_match_library_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.grounding, GroundingConfig::default());
        assert_eq!(c.scoring_config(None), ScoringConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_and_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"grounding":{"detection_threshold":0.4},"strategy":{"kind":"random","seed":3}}"#).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.grounding.detection_threshold, 0.4);
        assert_eq!(c.grounding.segmentation_confidence_threshold, 0.5);
        assert_eq!(c.strategy.kind, StrategyKind::Random);
        std::fs::write(&p, r#"{"detection_threshold":0.4}"#).unwrap();
        assert!(RunConfig::load(&p).is_err());
    }

    #[test]
    fn validation() {
        let c = RunConfig {
            reference_mode: ReferenceMode::FromVocabularyGrounding,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            data_ratio: 0.0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn remote_needs_endpoints() {
        let mut c = RunConfig::default();
        assert!(c.build_backends().is_err());
        c.backends.endpoints = EndpointConfig {
            parser: Some("http://p".into()),
            detector: Some("http://d".into()),
            segmenter: None,
            embedder: Some("http://e".into()),
        };
        assert!(c.build_backends().is_err());
        c.backends.use_segmenter = false;
        let (b, fx) = c.build_backends().unwrap();
        assert!(b.segmenter.is_none() && fx.is_none());
    }
}
