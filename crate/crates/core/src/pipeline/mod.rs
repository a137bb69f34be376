//! Dataset scoring, ranking and selection.
//!
//! [`Pipeline::run`] scores samples in fixed-size chunks on a bounded worker
//! pool and hands outcomes to a sink in input order, so output bytes never
//! depend on scheduling. Successful per-sample outcomes are checkpointed in
//! the cache; an interrupted run that is restarted with the same
//! configuration replays them without backend calls.

pub mod cache;
pub mod dataset;
pub mod manifest;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baseline::{aloha_reference_free, ovf_alm_score, AlohaScore};
use crate::backend::Backends;
use crate::grounding::{EntityEvidence, GroundedVia};
use crate::hashing::text_hash;
use crate::model::{CaptionSample, FactualityScore, ReferenceMode};
use crate::par::Executor;
use crate::scoring::{SampleError, Scorer, ScoringConfig};
use crate::vocabulary::Vocabulary;

use cache::{cached_backends, CacheError, CacheKey, RunCounters, ScoreCache};
use dataset::DatasetError;
pub use manifest::{read_manifest, select_top_fraction, write_manifest, ManifestEntry, ManifestError, SelectionManifest};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    #[default]
    OvfactF1,
    OvfactPrecisionOnly,
    OvfactRecallOnly,
    OvfAlm,
    Aloha,
    Random,
    ExternalScore,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::OvfactF1,
        StrategyKind::OvfactPrecisionOnly,
        StrategyKind::OvfactRecallOnly,
        StrategyKind::OvfAlm,
        StrategyKind::Aloha,
        StrategyKind::Random,
        StrategyKind::ExternalScore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::OvfactF1 => "ovfact_f1",
            StrategyKind::OvfactPrecisionOnly => "ovfact_precision_only",
            StrategyKind::OvfactRecallOnly => "ovfact_recall_only",
            StrategyKind::OvfAlm => "ovf_alm",
            StrategyKind::Aloha => "aloha",
            StrategyKind::Random => "random",
            StrategyKind::ExternalScore => "external_score",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn uses_backends(self) -> bool {
        !matches!(self, StrategyKind::Random | StrategyKind::ExternalScore)
    }

    pub fn needs_vocabulary(self) -> bool {
        matches!(self, StrategyKind::OvfAlm | StrategyKind::Aloha)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDirection {
    /// Values such as perplexity; the record score is the negated value.
    #[default]
    LowerIsBetter,
    HigherIsBetter,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionStrategy {
    pub kind: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<ScoreDirection>,
}

impl SelectionStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn random(seed: u64) -> Self {
        Self {
            seed: Some(seed),
            ..Self::new(StrategyKind::Random)
        }
    }

    pub fn external(score_file: impl Into<PathBuf>, direction: ScoreDirection) -> Self {
        Self {
            score_file: Some(score_file.into()),
            direction: Some(direction),
            ..Self::new(StrategyKind::ExternalScore)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            StrategyKind::Random if self.seed.is_none() => Err("random strategy requires a seed".into()),
            StrategyKind::ExternalScore if self.score_file.is_none() => {
                Err("external_score strategy requires a score file".into())
            }
            _ => Ok(()),
        }
    }
}

/// One successfully scored sample. OVFact fields are present for the
/// OVFact strategies; counts are also present for the matching baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_mode: Option<ReferenceMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounded_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_count: Option<usize>,
    pub degenerate: bool,
}

impl ScoreRecord {
    pub fn plain(id: impl Into<String>, score: f64) -> Self {
        Self {
            id: id.into(),
            score,
            precision: None,
            recall: None,
            f1: None,
            reference_mode: None,
            candidate_count: None,
            grounded_count: None,
            reference_count: None,
            degenerate: false,
        }
    }

    pub fn from_factuality(id: impl Into<String>, score: f64, f: &FactualityScore) -> Self {
        Self {
            precision: Some(f.precision),
            recall: Some(f.recall),
            f1: Some(f.f1),
            reference_mode: Some(f.reference_mode),
            candidate_count: Some(f.candidate_count),
            grounded_count: Some(f.grounded_count),
            reference_count: Some(f.reference_count),
            degenerate: f.degenerate,
            ..Self::plain(id, score)
        }
    }

    fn from_aloha(id: impl Into<String>, a: &AlohaScore) -> Self {
        Self {
            candidate_count: Some(a.candidate_count),
            reference_count: Some(a.reference_count),
            degenerate: a.degenerate,
            ..Self::plain(id, a.score)
        }
    }

    pub fn factuality(&self) -> Option<FactualityScore> {
        Some(FactualityScore {
            precision: self.precision?,
            recall: self.recall?,
            f1: self.f1?,
            reference_mode: self.reference_mode?,
            candidate_count: self.candidate_count?,
            grounded_count: self.grounded_count?,
            reference_count: self.reference_count?,
            degenerate: self.degenerate,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub id: String,
    pub stage: String,
    pub error: String,
    pub retryable: bool,
}

impl From<&SampleError> for ErrorRecord {
    fn from(e: &SampleError) -> Self {
        Self {
            id: e.sample_id.clone(),
            stage: e.stage.to_string(),
            error: e.kind.to_string(),
            retryable: e.is_retryable(),
        }
    }
}

/// Per-entity grounding evidence, one line per candidate in `--dump-evidence`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub sample_id: String,
    pub entity: String,
    pub det_score: f64,
    pub seg_conf: Option<f64>,
    pub seg_cov: Option<f64>,
    pub grounded: bool,
    pub via: GroundedVia,
}

impl EvidenceRecord {
    fn new(sample_id: &str, e: &EntityEvidence) -> Self {
        Self {
            sample_id: sample_id.to_owned(),
            entity: e.entity.surface().to_owned(),
            det_score: e.det_score,
            seg_conf: e.seg_conf,
            seg_cov: e.seg_cov,
            grounded: e.grounded(),
            via: e.via,
        }
    }
}

/// A line of the score output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum OutputLine {
    Score(ScoreRecord),
    Error(ErrorRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SampleOutcome {
    Scored {
        record: ScoreRecord,
        evidence: Vec<EvidenceRecord>,
    },
    Failed(ErrorRecord),
}

impl SampleOutcome {
    pub fn id(&self) -> &str {
        match self {
            SampleOutcome::Scored { record, .. } => &record.id,
            SampleOutcome::Failed(e) => &e.id,
        }
    }

    pub fn record(&self) -> Option<&ScoreRecord> {
        match self {
            SampleOutcome::Scored { record, .. } => Some(record),
            SampleOutcome::Failed(_) => None,
        }
    }

    pub fn output_line(&self) -> OutputLine {
        match self {
            SampleOutcome::Scored { record, .. } => OutputLine::Score(record.clone()),
            SampleOutcome::Failed(e) => OutputLine::Error(e.clone()),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("output: {0}")]
    Output(#[from] std::io::Error),
    #[error("interrupted after {processed} samples")]
    Interrupted { processed: usize },
    #[error("{failed} of {total} samples failed, above the {:.2}% ceiling", ceiling * 100.0)]
    FailureCeiling {
        failed: usize,
        total: usize,
        ceiling: f64,
        summary: Box<RunSummary>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub concurrency: usize,
    pub failure_ceiling: f64,
    pub chunk_size: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            concurrency: 8,
            failure_ceiling: 0.01,
            chunk_size: 256,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub total: usize,
    pub scored: usize,
    pub failed: usize,
    pub degenerate: usize,
    pub failures_by_stage: BTreeMap<String, usize>,
    pub mean_score: Option<f64>,
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
    pub mean_f1: Option<f64>,
    pub cache: Option<RunCounters>,
}

#[derive(Default)]
struct Accumulator {
    summary: RunSummary,
    sums: [f64; 4],
    ovfact: usize,
}

impl Accumulator {
    fn add(&mut self, o: &SampleOutcome) {
        self.summary.total += 1;
        match o {
            SampleOutcome::Scored { record, .. } => {
                self.summary.scored += 1;
                self.summary.degenerate += usize::from(record.degenerate);
                self.sums[0] += record.score;
                if let Some(f) = record.factuality() {
                    self.ovfact += 1;
                    self.sums[1] += f.precision;
                    self.sums[2] += f.recall;
                    self.sums[3] += f.f1;
                }
            }
            SampleOutcome::Failed(e) => {
                self.summary.failed += 1;
                *self.summary.failures_by_stage.entry(e.stage.clone()).or_default() += 1;
            }
        }
    }

    fn finish(mut self) -> RunSummary {
        let mean = |sum: f64, n: usize| (n > 0).then(|| sum / n as f64);
        self.summary.mean_score = mean(self.sums[0], self.summary.scored);
        self.summary.mean_precision = mean(self.sums[1], self.ovfact);
        self.summary.mean_recall = mean(self.sums[2], self.ovfact);
        self.summary.mean_f1 = mean(self.sums[3], self.ovfact);
        self.summary
    }
}

/// Everything a [`Pipeline`] is built from.
#[derive(Clone, Default)]
pub struct PipelineInputs {
    pub strategy: SelectionStrategy,
    pub scoring: ScoringConfig,
    /// Required unless the strategy is `random` or `external_score`.
    pub backends: Option<Backends>,
    /// Required by `ovf_alm` and `aloha`.
    pub vocabulary: Option<Arc<Vocabulary>>,
    pub cache: Option<Arc<ScoreCache>>,
    pub options: PipelineOptions,
}

#[derive(Serialize)]
struct FingerprintParts<'a> {
    strategy: &'a SelectionStrategy,
    external_scores: Option<String>,
    grounding: &'a crate::grounding::GroundingConfig,
    reference_mode: ReferenceMode,
    prompt_id: &'a str,
    recall: &'a crate::scoring::RecallOptions,
    backends: Vec<String>,
    vocabulary: Option<String>,
}

pub struct Pipeline {
    strategy: SelectionStrategy,
    scorer: Option<Scorer>,
    vocabulary: Option<Arc<Vocabulary>>,
    external: Option<HashMap<String, f64>>,
    cache: Option<Arc<ScoreCache>>,
    options: PipelineOptions,
    fingerprint: String,
    executor: Executor,
    cancel: Arc<AtomicBool>,
}

impl Pipeline {
    pub fn new(inputs: PipelineInputs) -> Result<Self, PipelineError> {
        let PipelineInputs {
            strategy,
            scoring,
            backends,
            vocabulary,
            cache,
            options,
        } = inputs;
        strategy.validate().map_err(PipelineError::Config)?;
        scoring.validate().map_err(PipelineError::Config)?;
        if !(0.0..=1.0).contains(&options.failure_ceiling) {
            return Err(PipelineError::Config(format!(
                "failure ceiling must be in [0, 1], got {}",
                options.failure_ceiling
            )));
        }
        if options.chunk_size == 0 {
            return Err(PipelineError::Config("chunk size must be positive".into()));
        }
        let kind = strategy.kind;
        if kind.needs_vocabulary() && vocabulary.as_ref().is_none_or(|v| v.is_empty()) {
            return Err(PipelineError::Config(format!("strategy {} requires a vocabulary", kind.name())));
        }
        let vocabulary = vocabulary.or_else(|| scoring.reference.vocabulary.clone());
        let scorer = if kind.uses_backends() {
            let backends = backends
                .ok_or_else(|| PipelineError::Config(format!("strategy {} requires backends", kind.name())))?;
            let backends = match &cache {
                Some(c) => cached_backends(&backends, c.clone()),
                None => backends,
            };
            Some(Scorer::new(scoring.clone(), backends))
        } else {
            None
        };
        let (external, external_hash) = match (&strategy.score_file, kind) {
            (Some(path), StrategyKind::ExternalScore) => {
                let scores = dataset::read_external_scores(path)?;
                let mut sorted: Vec<_> = scores.iter().collect();
                sorted.sort_by(|a, b| a.0.cmp(b.0));
                let canon = serde_json::to_string(&sorted).expect("scores serialize");
                (Some(scores), Some(text_hash(&canon)))
            }
            _ => (None, None),
        };
        let parts = FingerprintParts {
            strategy: &strategy,
            external_scores: external_hash,
            grounding: &scoring.grounding,
            reference_mode: scoring.reference.mode,
            prompt_id: &scoring.prompt_id,
            recall: &scoring.recall,
            backends: scorer
                .iter()
                .flat_map(|s| s.backends().descriptors())
                .map(|d| format!("{}={}", d.kind, d.identity))
                .collect(),
            vocabulary: vocabulary.as_ref().map(|v| v.content_hash()),
        };
        let fingerprint = text_hash(&serde_json::to_string(&parts).expect("fingerprint serializes"));
        Ok(Self {
            strategy,
            scorer,
            vocabulary,
            external,
            cache,
            executor: Executor::new(options.concurrency),
            options,
            fingerprint,
            cancel: Arc::new(AtomicBool::new(false)),
        })
    }

    /// Shares a flag that, once set, stops the run at the next chunk boundary.
    pub fn with_cancel_flag(mut self, flag: Arc<AtomicBool>) -> Self {
        self.cancel = flag;
        self
    }

    pub fn strategy(&self) -> &SelectionStrategy {
        &self.strategy
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn scorer(&self) -> Option<&Scorer> {
        self.scorer.as_ref()
    }

    pub fn is_parallel(&self) -> bool {
        self.executor.is_parallel()
    }

    fn checkpoint_key(&self, sample: &CaptionSample) -> CacheKey {
        let body = serde_json::to_string(sample).expect("sample serializes");
        CacheKey::new(format!("checkpoint@{}", &self.fingerprint[..16]), "sample", text_hash(&body))
    }

    /// Scores one sample, consulting the checkpoint first.
    pub fn score_one(&self, sample: &CaptionSample) -> SampleOutcome {
        let checkpoint = self
            .cache
            .as_ref()
            .filter(|_| self.strategy.kind.uses_backends())
            .map(|c| (c, self.checkpoint_key(sample)));
        if let Some((cache, key)) = &checkpoint {
            if let Some(hit) = cache.get(key) {
                if let Ok(outcome) = serde_json::from_str::<SampleOutcome>(&hit) {
                    return outcome;
                }
            }
        }
        let outcome = self.compute(sample);
        if let (Some((cache, key)), SampleOutcome::Scored { .. }) = (checkpoint, &outcome) {
            let text = serde_json::to_string(&outcome).expect("outcome serializes");
            if let Err(e) = cache.put(key, text) {
                log::warn!("checkpoint write failed: {e}");
            }
        }
        outcome
    }

    fn compute(&self, sample: &CaptionSample) -> SampleOutcome {
        if let Err(e) = sample.validate() {
            return SampleOutcome::Failed(ErrorRecord {
                id: sample.id.clone(),
                stage: "validate".into(),
                error: e.to_string(),
                retryable: false,
            });
        }
        let scored = |record| SampleOutcome::Scored {
            record,
            evidence: Vec::new(),
        };
        let failed = |e: SampleError| SampleOutcome::Failed(ErrorRecord::from(&e));
        let kind = self.strategy.kind;
        match kind {
            StrategyKind::OvfactF1 | StrategyKind::OvfactPrecisionOnly | StrategyKind::OvfactRecallOnly => {
                let scorer = self.scorer.as_ref().expect("backend strategies have a scorer");
                match scorer.score(sample) {
                    Ok(s) => {
                        let f = &s.score;
                        let value = match kind {
                            StrategyKind::OvfactPrecisionOnly => f.precision,
                            StrategyKind::OvfactRecallOnly => f.recall,
                            _ => f.f1,
                        };
                        SampleOutcome::Scored {
                            record: ScoreRecord::from_factuality(&sample.id, value, f),
                            evidence: s
                                .grounding
                                .evidence
                                .iter()
                                .map(|e| EvidenceRecord::new(&sample.id, e))
                                .collect(),
                        }
                    }
                    Err(e) => failed(e),
                }
            }
            StrategyKind::OvfAlm | StrategyKind::Aloha => {
                let scorer = self.scorer.as_ref().expect("backend strategies have a scorer");
                let vocab = self.vocabulary.as_ref().expect("checked at construction");
                let res = if kind == StrategyKind::OvfAlm {
                    ovf_alm_score(scorer, sample, vocab)
                } else {
                    aloha_reference_free(scorer, sample, vocab)
                };
                match res {
                    Ok(a) => scored(ScoreRecord::from_aloha(&sample.id, &a)),
                    Err(e) => failed(e),
                }
            }
            StrategyKind::Random => {
                let seed = self.strategy.seed.expect("checked at construction");
                scored(ScoreRecord::plain(&sample.id, seeded_uniform(seed, &sample.id)))
            }
            StrategyKind::ExternalScore => {
                let scores = self.external.as_ref().expect("loaded at construction");
                match scores.get(&sample.id) {
                    Some(&v) => {
                        let v = match self.strategy.direction.unwrap_or_default() {
                            ScoreDirection::LowerIsBetter => -v,
                            ScoreDirection::HigherIsBetter => v,
                        };
                        scored(ScoreRecord::plain(&sample.id, v))
                    }
                    None => SampleOutcome::Failed(ErrorRecord {
                        id: sample.id.clone(),
                        stage: "external".into(),
                        error: "sample id not present in the score file".into(),
                        retryable: false,
                    }),
                }
            }
        }
    }

    /// Streams `samples` through scoring. Every sample produces exactly one
    /// outcome, delivered to `sink` in input order. Duplicate ids abort the
    /// run; the failure ceiling is checked once all samples are processed.
    pub fn run<I, F>(&self, samples: I, mut sink: F) -> Result<RunSummary, PipelineError>
    where
        I: IntoIterator<Item = Result<CaptionSample, DatasetError>>,
        F: FnMut(&SampleOutcome) -> std::io::Result<()>,
    {
        let mut seen = HashSet::new();
        let mut acc = Accumulator::default();
        let mut chunk = Vec::with_capacity(self.options.chunk_size);
        let mut iter = samples.into_iter().enumerate().peekable();
        while iter.peek().is_some() {
            chunk.clear();
            for (i, s) in iter.by_ref().take(self.options.chunk_size) {
                let s = s?;
                if !seen.insert(s.id.clone()) {
                    return Err(DatasetError::DuplicateId { id: s.id, line: i + 1 }.into());
                }
                chunk.push(s);
            }
            for outcome in self.executor.map(&chunk, |s| self.score_one(s)) {
                acc.add(&outcome);
                sink(&outcome)?;
            }
            if self.cancel.load(Ordering::SeqCst) {
                self.flush_cache()?;
                return Err(PipelineError::Interrupted {
                    processed: acc.summary.total,
                });
            }
        }
        self.flush_cache()?;
        let mut summary = acc.finish();
        summary.cache = self.cache.as_ref().map(|c| c.counters());
        let (failed, total) = (summary.failed, summary.total);
        if total > 0 && failed as f64 / total as f64 > self.options.failure_ceiling {
            return Err(PipelineError::FailureCeiling {
                failed,
                total,
                ceiling: self.options.failure_ceiling,
                summary: Box::new(summary),
            });
        }
        Ok(summary)
    }

    /// Collects the outcomes of an in-memory dataset.
    pub fn score_dataset(&self, samples: &[CaptionSample]) -> Result<(Vec<SampleOutcome>, RunSummary), PipelineError> {
        let mut out = Vec::with_capacity(samples.len());
        let summary = self.run(samples.iter().cloned().map(Ok), |o| {
            out.push(o.clone());
            Ok(())
        })?;
        Ok((out, summary))
    }

    /// Ranks the successful records and marks the top `ratio`.
    pub fn select(&self, records: &[ScoreRecord], ratio: f64) -> Result<SelectionManifest, ManifestError> {
        select_top_fraction(records, ratio, self.strategy.clone(), self.fingerprint.clone())
    }

    fn flush_cache(&self) -> Result<(), CacheError> {
        self.cache.as_ref().map_or(Ok(()), |c| c.flush())
    }
}

/// Uniform in [0, 1) from the seed and sample id alone, so the value does
/// not depend on dataset order.
pub fn seeded_uniform(seed: u64, sample_id: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(sample_id.as_bytes());
    let d = h.finalize();
    let x = u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"));
    (x >> 11) as f64 / (1u64 << 53) as f64
}

pub fn scored_records(outcomes: &[SampleOutcome]) -> Vec<ScoreRecord> {
    outcomes.iter().filter_map(|o| o.record().cloned()).collect()
}
