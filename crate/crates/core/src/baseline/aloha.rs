//! Matching-based caption scores: ALOHa-style one-to-one assignment between
//! candidates and references, aggregated by the minimum matched similarity.
//!
//! Unmatched candidates (when there are fewer references than candidates)
//! do not affect the score.

use serde::{Deserialize, Serialize};

use super::hungarian::{hungarian_assignment, Assignment};
use crate::backend::{BackendError, Embedder};
use crate::grounding::ground_entities;
use crate::model::{normalize_entity, CaptionSample, EntitySet, SimilarityMatrix};
use crate::scoring::{similarity_matrix, SampleError, Scorer, Stage};
use crate::vocabulary::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlohaScore {
    pub score: f64,
    pub degenerate: bool,
    pub assignment: Assignment,
    pub candidate_count: usize,
    pub reference_count: usize,
}

impl AlohaScore {
    fn degenerate(candidate_count: usize, reference_count: usize) -> Self {
        Self {
            score: 0.0,
            degenerate: true,
            assignment: Assignment {
                pairs: Vec::new(),
                total_similarity: 0.0,
            },
            candidate_count,
            reference_count,
        }
    }
}

/// Score from a precomputed reference × candidate matrix.
pub fn aloha_from_matrix(sim: &SimilarityMatrix) -> AlohaScore {
    if sim.is_empty() {
        return AlohaScore::degenerate(sim.cols(), sim.rows());
    }
    let assignment = hungarian_assignment(sim);
    let score = assignment
        .matched(sim)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    AlohaScore {
        score,
        degenerate: false,
        assignment,
        candidate_count: sim.cols(),
        reference_count: sim.rows(),
    }
}

pub fn aloha_score(
    references: &EntitySet,
    candidates: &EntitySet,
    embedder: &dyn Embedder,
) -> Result<AlohaScore, BackendError> {
    if references.is_empty() || candidates.is_empty() {
        return Ok(AlohaScore::degenerate(candidates.len(), references.len()));
    }
    let sim = similarity_matrix(references, candidates, embedder)?;
    Ok(aloha_from_matrix(&sim))
}

fn concepts(vocabulary: &Vocabulary) -> EntitySet {
    vocabulary.iter().filter_map(|c| normalize_entity(c).ok()).collect()
}

/// Hybrid baseline: the scorer's parsing and full vocabulary grounding
/// (detector and segmenter) build the sets, matching aggregates them.
pub fn ovf_alm_score(scorer: &Scorer, sample: &CaptionSample, vocabulary: &Vocabulary) -> Result<AlohaScore, SampleError> {
    matched_score(scorer, sample, vocabulary, true)
}

/// Reference-free ALOHa: references are the vocabulary concepts the detector
/// alone confirms.
pub fn aloha_reference_free(
    scorer: &Scorer,
    sample: &CaptionSample,
    vocabulary: &Vocabulary,
) -> Result<AlohaScore, SampleError> {
    matched_score(scorer, sample, vocabulary, false)
}

fn matched_score(
    scorer: &Scorer,
    sample: &CaptionSample,
    vocabulary: &Vocabulary,
    with_segmentation: bool,
) -> Result<AlohaScore, SampleError> {
    sample
        .validate()
        .map_err(|e| SampleError::new(&sample.id, Stage::Validate, e))?;
    let candidates = scorer.candidates(&sample.id, &sample.caption)?;
    if candidates.is_empty() {
        return Ok(AlohaScore::degenerate(0, 0));
    }
    let backends = scorer.backends();
    let segmenter = if with_segmentation {
        backends.segmenter.as_deref()
    } else {
        None
    };
    let references = ground_entities(
        &concepts(vocabulary),
        &sample.image,
        &scorer.config().grounding,
        backends.detector.as_ref(),
        segmenter,
    )
    .map_err(|e| SampleError::new(&sample.id, Stage::Reference, e))?
    .grounded;
    aloha_score(&references, &candidates, backends.embedder.as_ref())
        .map_err(|e| SampleError::new(&sample.id, Stage::Embed, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::fixture::FixtureEmbedder;
    use crate::model::build_entity_set;

    #[test]
    fn perfect_match_scores_one() {
        let e = FixtureEmbedder::from_pairs([("dog", vec![1.0, 0.0]), ("cat", vec![0.0, 1.0])]);
        let s = build_entity_set(["dog", "cat"]);
        assert_eq!(aloha_score(&s, &s, &e).unwrap().score, 1.0);
    }

    #[test]
    fn forced_match_ignores_extra_candidates() {
        // phone·sunglasses = 0.3, phone·person = 0.2
        let e = FixtureEmbedder::from_pairs([
            ("cell phone", vec![1.0, 0.0, 0.0]),
            ("sunglasses", vec![0.3, (1.0f64 - 0.09).sqrt(), 0.0]),
            ("person", vec![0.2, 0.0, (1.0f64 - 0.04).sqrt()]),
        ]);
        let r = build_entity_set(["cell phone"]);
        let c = build_entity_set(["sunglasses", "person"]);
        let a = aloha_score(&r, &c, &e).unwrap();
        assert_eq!(a.assignment.pairs, [(0, 0)]);
        assert!((a.score - 0.3).abs() < 1e-12);
    }

    #[test]
    fn minimum_over_matched_pairs() {
        let sim = SimilarityMatrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.7], vec![0.0, 0.0]]).unwrap();
        let a = aloha_from_matrix(&sim);
        assert_eq!(a.assignment.pairs, [(0, 0), (1, 1)]);
        assert_eq!(a.score, 0.7);
    }

    #[test]
    fn empty_sides_are_degenerate() {
        let e = FixtureEmbedder::from_pairs([("dog", vec![1.0])]);
        let s = build_entity_set(["dog"]);
        let a = aloha_score(&EntitySet::new(), &s, &e).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.score, 0.0);
        assert!(aloha_score(&s, &EntitySet::new(), &e).unwrap().degenerate);
        assert_eq!(e.calls(), 0);
    }
}
