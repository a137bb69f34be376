//! Factuality scoring of a caption against its image.
//!
//! * precision: grounded candidates over all candidates, `|G| / |C|`
//! * recall: for each reference entity take its best cosine similarity to
//!   any candidate, then average over references
//! * f1: harmonic mean of the two
//!
//! References come either from parsing a trusted reference caption or, in
//! the reference-free mode, from grounding every vocabulary concept against
//! the image.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{self, prompt, BackendError, Backends, Embedder, ParseRequest};
use crate::grounding::{ground_entities, GroundingConfig, GroundingResult};
use crate::model::{
    normalize_entity, CaptionSample, EntitySet, FactualityScore, ModelError, ReferenceMode, SimilarityMatrix,
};
use crate::vocabulary::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Parse,
    Ground,
    Reference,
    Embed,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Validate => "validate",
            Stage::Parse => "parse",
            Stage::Ground => "ground",
            Stage::Reference => "reference",
            Stage::Embed => "embed",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreErrorKind {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error("configuration: {0}")]
    Config(String),
}

/// A scoring failure for one sample.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("sample {sample_id}: {stage} stage failed: {kind}")]
pub struct SampleError {
    pub sample_id: String,
    pub stage: Stage,
    pub kind: ScoreErrorKind,
}

impl SampleError {
    pub fn new(sample_id: &str, stage: Stage, kind: impl Into<ScoreErrorKind>) -> Self {
        Self {
            sample_id: sample_id.to_owned(),
            stage,
            kind: kind.into(),
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(&self.kind, ScoreErrorKind::Backend(b) if b.is_retryable())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSetSpec {
    pub mode: ReferenceMode,
    #[serde(skip)]
    pub vocabulary: Option<Arc<Vocabulary>>,
}

impl ReferenceSetSpec {
    pub fn from_gt_caption() -> Self {
        Self {
            mode: ReferenceMode::FromGtCaption,
            vocabulary: None,
        }
    }

    pub fn from_vocabulary(vocabulary: Arc<Vocabulary>) -> Self {
        Self {
            mode: ReferenceMode::FromVocabularyGrounding,
            vocabulary: Some(vocabulary),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match (self.mode, &self.vocabulary) {
            (ReferenceMode::FromVocabularyGrounding, None) => {
                Err("vocabulary grounding mode requires a vocabulary".into())
            }
            (ReferenceMode::FromVocabularyGrounding, Some(v)) if v.is_empty() => {
                Err("vocabulary grounding mode requires a non-empty vocabulary".into())
            }
            _ => Ok(()),
        }
    }
}

/// A score together with whether its denominator was empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub degenerate: bool,
}

/// Cosine similarities between every reference (rows) and candidate (columns).
///
/// Each distinct surface is embedded once, in a single batch. If either set
/// is empty no embedding call is made and the matrix has a zero dimension.
pub fn similarity_matrix(
    references: &EntitySet,
    candidates: &EntitySet,
    embedder: &dyn Embedder,
) -> Result<SimilarityMatrix, BackendError> {
    if references.is_empty() || candidates.is_empty() {
        return Ok(SimilarityMatrix::empty(references.len(), candidates.len()));
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut texts: Vec<String> = Vec::new();
    for e in references.iter().chain(candidates.iter()) {
        index.entry(e.surface()).or_insert_with(|| {
            texts.push(e.surface().to_owned());
            texts.len() - 1
        });
    }
    let vectors = backend::embed_texts(embedder, &texts)?;
    let mut values = Vec::with_capacity(references.len() * candidates.len());
    for r in references {
        let rv = &vectors[index[r.surface()]];
        for c in candidates {
            values.push(rv.dot(&vectors[index[c.surface()]]));
        }
    }
    SimilarityMatrix::from_row_major(references.len(), candidates.len(), values)
        .map_err(|e| BackendError::Protocol(e.to_string()))
}

/// `|G| / |C|`; zero and degenerate when there are no candidates.
pub fn ovfact_precision(grounding: &GroundingResult, candidates: &EntitySet) -> MetricValue {
    if candidates.is_empty() {
        return MetricValue {
            value: 0.0,
            degenerate: true,
        };
    }
    MetricValue {
        value: grounding.grounded.len() as f64 / candidates.len() as f64,
        degenerate: false,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallOptions {
    /// Floor negative similarities at zero before averaging.
    pub clamp_negative: bool,
}

pub fn ovfact_recall(sim: &SimilarityMatrix) -> MetricValue {
    ovfact_recall_with(sim, RecallOptions::default())
}

/// Mean over reference rows of the row maximum. No references: zero and
/// degenerate. No candidates: zero.
pub fn ovfact_recall_with(sim: &SimilarityMatrix, opts: RecallOptions) -> MetricValue {
    if sim.rows() == 0 {
        return MetricValue {
            value: 0.0,
            degenerate: true,
        };
    }
    if sim.cols() == 0 {
        return MetricValue {
            value: 0.0,
            degenerate: false,
        };
    }
    let total: f64 = (0..sim.rows())
        .map(|j| {
            let best = sim.row(j).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if opts.clamp_negative {
                best.max(0.0)
            } else {
                best
            }
        })
        .sum();
    MetricValue {
        value: total / sim.rows() as f64,
        degenerate: false,
    }
}

/// Harmonic mean; zero when both inputs are zero or negative-summing.
pub fn ovfact_f1(precision: f64, recall: f64) -> f64 {
    let denom = precision + recall;
    if denom <= 0.0 {
        0.0
    } else {
        (2.0 * precision * recall / denom).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub grounding: GroundingConfig,
    pub reference: ReferenceSetSpec,
    pub prompt_id: String,
    pub recall: RecallOptions,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            grounding: GroundingConfig::default(),
            reference: ReferenceSetSpec::from_gt_caption(),
            prompt_id: prompt::DEFAULT_PROMPT_ID.to_owned(),
            recall: RecallOptions::default(),
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.grounding.validate().map_err(|e| e.to_string())?;
        self.reference.validate()?;
        if prompt::template(&self.prompt_id).is_none() {
            return Err(format!("unknown prompt id {:?}", self.prompt_id));
        }
        Ok(())
    }
}

/// Everything computed while scoring one caption.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCaption {
    pub score: FactualityScore,
    pub candidates: EntitySet,
    pub references: EntitySet,
    pub grounding: GroundingResult,
    pub similarity: SimilarityMatrix,
}

/// Composes parsing, grounding, reference construction and the three scores.
#[derive(Debug, Clone)]
pub struct Scorer {
    config: ScoringConfig,
    backends: Backends,
}

impl Scorer {
    pub fn new(config: ScoringConfig, backends: Backends) -> Self {
        Self { config, backends }
    }

    pub fn config(&self) -> &ScoringConfig {
        &self.config
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    /// Parses a caption into its deduplicated candidate set.
    pub fn candidates(&self, sample_id: &str, caption: &str) -> Result<EntitySet, SampleError> {
        let req = ParseRequest::new(caption, &self.config.prompt_id);
        let phrases = backend::parse_caption(self.backends.parser.as_ref(), &req)
            .map_err(|e| SampleError::new(sample_id, Stage::Parse, e))?;
        let (set, rejected) = EntitySet::from_phrases(&phrases);
        if rejected > 0 {
            log::debug!("sample {sample_id}: dropped {rejected} blank parser phrase(s)");
        }
        Ok(set)
    }

    pub fn ground(&self, sample: &CaptionSample, candidates: &EntitySet) -> Result<GroundingResult, SampleError> {
        ground_entities(
            candidates,
            &sample.image,
            &self.config.grounding,
            self.backends.detector.as_ref(),
            self.backends.segmenter.as_deref(),
        )
        .map_err(|e| SampleError::new(&sample.id, Stage::Ground, e))
    }

    pub fn reference_set(&self, sample: &CaptionSample) -> Result<EntitySet, SampleError> {
        build_reference_set(sample, &self.config.reference, &self.config, &self.backends)
    }

    pub fn score(&self, sample: &CaptionSample) -> Result<ScoredCaption, SampleError> {
        sample
            .validate()
            .map_err(|e| SampleError::new(&sample.id, Stage::Validate, e))?;
        let candidates = self.candidates(&sample.id, &sample.caption)?;
        if candidates.is_empty() {
            return Ok(ScoredCaption {
                score: FactualityScore {
                    precision: 0.0,
                    recall: 0.0,
                    f1: 0.0,
                    reference_mode: self.config.reference.mode,
                    candidate_count: 0,
                    grounded_count: 0,
                    reference_count: 0,
                    degenerate: true,
                },
                candidates,
                references: EntitySet::new(),
                grounding: GroundingResult::default(),
                similarity: SimilarityMatrix::empty(0, 0),
            });
        }
        let grounding = self.ground(sample, &candidates)?;
        let references = self.reference_set(sample)?;
        let similarity = similarity_matrix(&references, &candidates, self.backends.embedder.as_ref())
            .map_err(|e| SampleError::new(&sample.id, Stage::Embed, e))?;

        let precision = ovfact_precision(&grounding, &candidates);
        let recall = ovfact_recall_with(&similarity, self.config.recall);
        let score = FactualityScore {
            precision: precision.value,
            recall: recall.value,
            f1: ovfact_f1(precision.value, recall.value),
            reference_mode: self.config.reference.mode,
            candidate_count: candidates.len(),
            grounded_count: grounding.grounded.len(),
            reference_count: references.len(),
            degenerate: precision.degenerate || recall.degenerate,
        };
        Ok(ScoredCaption {
            score,
            candidates,
            references,
            grounding,
            similarity,
        })
    }
}

/// Reference entities for `sample`: parsed from its reference caption, or the
/// vocabulary concepts that ground in its image.
pub fn build_reference_set(
    sample: &CaptionSample,
    spec: &ReferenceSetSpec,
    cfg: &ScoringConfig,
    backends: &Backends,
) -> Result<EntitySet, SampleError> {
    match spec.mode {
        ReferenceMode::FromGtCaption => {
            let reference = sample.reference_caption.as_deref().ok_or_else(|| {
                SampleError::new(
                    &sample.id,
                    Stage::Reference,
                    ScoreErrorKind::Config("reference caption mode but sample has no reference_caption".into()),
                )
            })?;
            let req = ParseRequest::new(reference, &cfg.prompt_id);
            let phrases = backend::parse_caption(backends.parser.as_ref(), &req)
                .map_err(|e| SampleError::new(&sample.id, Stage::Reference, e))?;
            Ok(EntitySet::from_phrases(&phrases).0)
        }
        ReferenceMode::FromVocabularyGrounding => {
            let vocab = spec.vocabulary.as_ref().ok_or_else(|| {
                SampleError::new(
                    &sample.id,
                    Stage::Reference,
                    ScoreErrorKind::Config("vocabulary grounding mode without a vocabulary".into()),
                )
            })?;
            let concepts: EntitySet = vocab.iter().filter_map(|c| normalize_entity(c).ok()).collect();
            let grounded = ground_entities(
                &concepts,
                &sample.image,
                &cfg.grounding,
                backends.detector.as_ref(),
                backends.segmenter.as_deref(),
            )
            .map_err(|e| SampleError::new(&sample.id, Stage::Reference, e))?;
            Ok(grounded.grounded)
        }
    }
}
