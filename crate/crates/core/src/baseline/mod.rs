//! Comparison metrics: CHAIR, ALOHa-style matching and the hybrid that
//! feeds open-vocabulary grounding into ALOHa matching.

pub mod aloha;
pub mod chair;
pub mod hungarian;

pub use aloha::{aloha_from_matrix, aloha_reference_free, aloha_score, ovf_alm_score, AlohaScore};
pub use chair::{canonical_objects, chair_caption, chair_i, chair_parse, chair_s, split_sentences, ChairRecord, ClosedVocabulary};
pub use hungarian::{hungarian_assignment, Assignment};
