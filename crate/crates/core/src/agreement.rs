//! Metric-vs-human agreement for side-by-side judgments, and stage
//! specificity against annotated entity lists.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{self, BackendError, Embedder};
use crate::model::EntitySet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgreementError {
    #[error("no metric score for sample {sample_id} / model {model}")]
    MissingScore { sample_id: String, model: String },
    #[error("judgment on sample {0} compares a model with itself")]
    SameModel(String),
    #[error("no decisive judgments on the {0} axis; agreement rate is undefined")]
    Undefined(Axis),
    #[error("annotated entity set is empty")]
    EmptyAnnotation,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Precision,
    Recall,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Precision => "precision",
            Axis::Recall => "recall",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ABetter,
    Neutral,
    BBetter,
}

impl Verdict {
    pub fn inverted(self) -> Self {
        match self {
            Verdict::ABetter => Verdict::BBetter,
            Verdict::Neutral => Verdict::Neutral,
            Verdict::BBetter => Verdict::ABetter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub sample_id: String,
    pub model_a: String,
    pub model_b: String,
    pub axis: Axis,
    pub verdict: Verdict,
    pub annotator_id: String,
}

impl JudgmentRecord {
    pub fn swapped(&self) -> Self {
        Self {
            model_a: self.model_b.clone(),
            model_b: self.model_a.clone(),
            verdict: self.verdict.inverted(),
            ..self.clone()
        }
    }
}

pub type MetricScores = HashMap<(String, String), f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub axis: Axis,
    pub rate: f64,
    pub agreed: usize,
    pub decisive: usize,
    pub neutral_excluded: usize,
    pub ties_excluded: usize,
}

/// Fraction of decisive judgments whose preferred model also has the higher
/// metric score. Neutral verdicts and exact metric ties are left out of the
/// denominator; every judgment counts on its own.
pub fn agreement_rate(
    judgments: &[JudgmentRecord],
    scores: &MetricScores,
    axis: Axis,
) -> Result<AgreementReport, AgreementError> {
    let lookup = |sample: &str, model: &str| {
        scores
            .get(&(sample.to_owned(), model.to_owned()))
            .copied()
            .ok_or_else(|| AgreementError::MissingScore {
                sample_id: sample.to_owned(),
                model: model.to_owned(),
            })
    };
    let mut report = AgreementReport {
        axis,
        rate: 0.0,
        agreed: 0,
        decisive: 0,
        neutral_excluded: 0,
        ties_excluded: 0,
    };
    for j in judgments.iter().filter(|j| j.axis == axis) {
        if j.model_a == j.model_b {
            return Err(AgreementError::SameModel(j.sample_id.clone()));
        }
        let a = lookup(&j.sample_id, &j.model_a)?;
        let b = lookup(&j.sample_id, &j.model_b)?;
        if j.verdict == Verdict::Neutral {
            report.neutral_excluded += 1;
            continue;
        }
        if a == b {
            report.ties_excluded += 1;
            continue;
        }
        report.decisive += 1;
        let metric_prefers_a = a > b;
        if metric_prefers_a == (j.verdict == Verdict::ABetter) {
            report.agreed += 1;
        }
    }
    if report.decisive == 0 {
        return Err(AgreementError::Undefined(axis));
    }
    report.rate = report.agreed as f64 / report.decisive as f64;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecificityReport {
    pub matched: usize,
    pub annotated: usize,
    pub specificity: f64,
}

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.9;

/// Fraction of annotated entities recovered by `extracted`: an exact surface
/// match always counts, otherwise the best cosine similarity to any
/// extracted entity must reach `match_threshold`.
pub fn specificity(
    extracted: &EntitySet,
    annotated: &EntitySet,
    embedder: &dyn Embedder,
    match_threshold: f64,
) -> Result<SpecificityReport, AgreementError> {
    if annotated.is_empty() {
        return Err(AgreementError::EmptyAnnotation);
    }
    let exact = annotated.iter().filter(|a| extracted.contains(a)).count();
    let pending: Vec<String> = annotated
        .iter()
        .filter(|a| !extracted.contains(a))
        .map(|a| a.surface().to_owned())
        .collect();
    let mut fuzzy = 0;
    if !pending.is_empty() && !extracted.is_empty() {
        let extracted_texts = extracted.surfaces();
        let texts: Vec<String> = pending.iter().chain(&extracted_texts).cloned().collect();
        let vectors = backend::embed_texts(embedder, &texts)?;
        let (pend_v, ext_v) = vectors.split_at(pending.len());
        fuzzy = pend_v
            .iter()
            .filter(|p| ext_v.iter().map(|e| p.dot(e)).fold(f64::NEG_INFINITY, f64::max) >= match_threshold)
            .count();
    }
    let matched = exact + fuzzy;
    Ok(SpecificityReport {
        matched,
        annotated: annotated.len(),
        specificity: matched as f64 / annotated.len() as f64,
    })
}
