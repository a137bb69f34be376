//! Open-vocabulary caption factuality scoring.
//!
//! A caption is parsed into candidate entities, each candidate is grounded
//! in the image by an open-vocabulary detector or segmenter, and the
//! caption is compared with a reference entity set through text embeddings.
//! Precision is the grounded fraction of candidates, recall the mean best
//! similarity of each reference to any candidate, and the caption score is
//! their harmonic mean.
//!
//! All models sit behind the traits in [`backend`]; [`backend::fixture`]
//! provides deterministic table-driven implementations for tests and
//! offline runs.

pub mod agreement;
pub mod backend;
pub mod baseline;
pub mod config;
pub mod grounding;
pub mod hashing;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod scoring;
pub mod vocabulary;

pub use model::{
    build_entity_set, normalize_entity, CaptionSample, EmbeddingVector, Entity, EntitySet, FactualityScore, ImageRef,
    ReferenceMode, SimilarityMatrix,
};
pub use scoring::{ovfact_f1, ovfact_precision, ovfact_recall, ReferenceSetSpec, Scorer, ScoringConfig};
pub use vocabulary::{build_vocabulary, Vocabulary};
