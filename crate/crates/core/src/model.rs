//! Domain types shared by every stage: entities, entity sets, images,
//! caption samples, embeddings, similarity matrices and factuality scores.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("entity phrase is empty after trimming")]
    EmptyEntity,
    #[error("image id must be non-empty")]
    EmptyImageId,
    #[error("image {id}: width and height must both be positive when present")]
    BadImageSize { id: String },
    #[error("sample {id}: caption must be non-empty")]
    EmptyCaption { id: String },
    #[error("sample id must be non-empty")]
    EmptySampleId,
    #[error("embedding has dimension zero")]
    ZeroDim,
    #[error("embedding value at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("similarity matrix expects {expected} values, got {got}")]
    MatrixShape { expected: usize, got: usize },
}

/// A normalized noun phrase, optionally qualified by visual attributes.
///
/// The surface form is casefolded and whitespace-collapsed. The head noun is
/// the final token; every token before it is treated as an attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    surface: String,
    head: String,
    attributes: Vec<String>,
}

impl Entity {
    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn head(&self) -> &str {
        &self.head
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    /// Identity used for deduplication.
    pub fn key(&self) -> &str {
        &self.surface
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

/// Casefolds and collapses internal whitespace.
pub fn fold_phrase(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn normalize_entity(raw: &str) -> Result<Entity, ModelError> {
    let surface = fold_phrase(raw);
    if surface.is_empty() {
        return Err(ModelError::EmptyEntity);
    }
    let mut tokens: Vec<String> = surface.split(' ').map(str::to_owned).collect();
    let head = tokens.pop().expect("non-empty surface has a token");
    Ok(Entity {
        surface,
        head,
        attributes: tokens,
    })
}

/// Ordered, deduplicated collection of entities. First occurrence wins.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Entity>", into = "Vec<Entity>")]
pub struct EntitySet {
    entities: Vec<Entity>,
    keys: HashSet<String>,
}

impl PartialEq for EntitySet {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities
    }
}

impl Eq for EntitySet {}

impl From<Vec<Entity>> for EntitySet {
    fn from(entities: Vec<Entity>) -> Self {
        entities.into_iter().collect()
    }
}

impl From<EntitySet> for Vec<Entity> {
    fn from(set: EntitySet) -> Self {
        set.entities
    }
}

impl FromIterator<Entity> for EntitySet {
    fn from_iter<I: IntoIterator<Item = Entity>>(iter: I) -> Self {
        let mut set = EntitySet::new();
        for e in iter {
            set.insert(e);
        }
        set
    }
}

impl<'a> IntoIterator for &'a EntitySet {
    type Item = &'a Entity;
    type IntoIter = std::slice::Iter<'a, Entity>;

    fn into_iter(self) -> Self::IntoIter {
        self.entities.iter()
    }
}

impl EntitySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Normalizes and deduplicates raw phrases. Phrases that fail
    /// normalization are skipped; the second element reports how many.
    pub fn from_phrases<I, S>(raws: I) -> (Self, usize)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = EntitySet::new();
        let mut rejected = 0;
        for raw in raws {
            match normalize_entity(raw.as_ref()) {
                Ok(e) => {
                    set.insert(e);
                }
                Err(_) => rejected += 1,
            }
        }
        (set, rejected)
    }

    /// Returns false when an entity with the same key is already present.
    pub fn insert(&mut self, entity: Entity) -> bool {
        if self.keys.contains(entity.key()) {
            return false;
        }
        self.keys.insert(entity.key().to_owned());
        self.entities.push(entity);
        true
    }

    pub fn contains(&self, entity: &Entity) -> bool {
        self.keys.contains(entity.key())
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.keys.contains(key)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Entity> {
        self.entities.iter()
    }

    pub fn as_slice(&self) -> &[Entity] {
        &self.entities
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.entities.iter().map(|e| e.surface.clone()).collect()
    }

    /// Order-preserving union: entries of `self` first, then new entries of `other`.
    pub fn union(&self, other: &EntitySet) -> EntitySet {
        self.iter().chain(other.iter()).cloned().collect()
    }

    pub fn difference(&self, other: &EntitySet) -> EntitySet {
        self.iter().filter(|e| !other.contains(e)).cloned().collect()
    }

    pub fn is_subset(&self, other: &EntitySet) -> bool {
        self.iter().all(|e| other.contains(e))
    }
}

pub fn build_entity_set<I, S>(raws: I) -> EntitySet
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    EntitySet::from_phrases(raws).0
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

impl ImageRef {
    pub fn new(id: impl Into<String>, uri: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            uri: uri.into(),
            width: None,
            height: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.id.is_empty() {
            return Err(ModelError::EmptyImageId);
        }
        let bad = |v: Option<u32>| matches!(v, Some(0));
        if bad(self.width) || bad(self.height) || self.width.is_some() != self.height.is_some() {
            return Err(ModelError::BadImageSize {
                id: self.id.clone(),
            });
        }
        Ok(())
    }
}

/// One dataset row. The image field accepts either a bare string (used as
/// both id and uri) or a full [`ImageRef`] object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionSample {
    pub id: String,
    #[serde(deserialize_with = "image_from_str_or_struct")]
    pub image: ImageRef,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_caption: Option<String>,
    /// Annotated object labels, only consulted by the CHAIR metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_objects: Option<Vec<String>>,
}

impl CaptionSample {
    pub fn new(id: impl Into<String>, image: ImageRef, caption: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image,
            caption: caption.into(),
            reference_caption: None,
            gt_objects: None,
        }
    }

    pub fn with_reference(mut self, reference: impl Into<String>) -> Self {
        self.reference_caption = Some(reference.into());
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.id.is_empty() {
            return Err(ModelError::EmptySampleId);
        }
        if self.caption.trim().is_empty() {
            return Err(ModelError::EmptyCaption {
                id: self.id.clone(),
            });
        }
        self.image.validate()
    }
}

fn image_from_str_or_struct<'de, D>(de: D) -> Result<ImageRef, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Uri(String),
        Full(ImageRef),
    }
    Ok(match Repr::deserialize(de)? {
        Repr::Uri(s) => ImageRef::new(s.clone(), s),
        Repr::Full(img) => img,
    })
}

/// A finite real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::ZeroDim);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { index });
        }
        Ok(Self { values })
    }

    /// Scales to unit L2 norm.
    pub fn normalized(values: Vec<f64>) -> Result<Self, ModelError> {
        let v = Self::new(values)?;
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(ModelError::ZeroNorm);
        }
        Ok(Self {
            values: v.values.into_iter().map(|x| x / norm).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Row-major reference × candidate cosine similarities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Values are clamped into [-1, 1].
    pub fn from_row_major(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != rows * cols {
            return Err(ModelError::MatrixShape {
                expected: rows * cols,
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { index });
        }
        Ok(Self {
            rows,
            cols,
            values: values.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let cols = rows.first().map_or(0, Vec::len);
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_major(rows.len(), cols, flat)
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.rows && col < self.cols, "index out of bounds");
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    FromGtCaption,
    FromVocabularyGrounding,
}

impl fmt::Display for ReferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReferenceMode::FromGtCaption => "from_gt_caption",
            ReferenceMode::FromVocabularyGrounding => "from_vocabulary_grounding",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactualityScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub reference_mode: ReferenceMode,
    pub candidate_count: usize,
    pub grounded_count: usize,
    pub reference_count: usize,
    /// Set when the candidate or reference set was empty.
    pub degenerate: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalizes_case_and_whitespace() {
        let e = normalize_entity("Red  Blanket").unwrap();
        assert_eq!(e.surface(), "red blanket");
        assert_eq!(e.head(), "blanket");
        assert_eq!(e.attributes(), ["red".to_string()]);
    }

    #[test]
    fn single_token_has_no_attributes() {
        let e = normalize_entity("sky").unwrap();
        assert_eq!(e.surface(), "sky");
        assert_eq!(e.head(), "sky");
        assert!(e.attributes().is_empty());
    }

    #[test]
    fn blank_phrase_is_rejected() {
        assert_eq!(normalize_entity("  "), Err(ModelError::EmptyEntity));
    }

    #[test]
    fn dedup_is_casefolded() {
        let set = build_entity_set(["dog", "Dog", "cat"]);
        assert_eq!(set.surfaces(), ["dog", "cat"]);
    }

    #[test]
    fn empty_input_gives_empty_set() {
        assert!(build_entity_set(Vec::<String>::new()).is_empty());
    }

    #[test]
    fn attributed_phrase_is_distinct_from_head() {
        let set = build_entity_set(["red blanket", "blanket"]);
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn rejected_phrases_are_counted() {
        let (set, rejected) = EntitySet::from_phrases(["dog", " ", "", "cat"]);
        assert_eq!(set.len(), 2);
        assert_eq!(rejected, 2);
    }

    #[test]
    fn image_size_must_be_positive() {
        let mut img = ImageRef::new("a", "a.jpg");
        assert!(img.validate().is_ok());
        img.width = Some(0);
        img.height = Some(10);
        assert!(img.validate().is_err());
        img.width = Some(10);
        assert!(img.validate().is_ok());
        assert!(ImageRef::new("", "x").validate().is_err());
    }

    #[test]
    fn sample_image_accepts_bare_string() {
        let s: CaptionSample =
            serde_json::from_str(r#"{"id":"s1","image":"img/1.jpg","caption":"A dog."}"#).unwrap();
        assert_eq!(s.image.id, "img/1.jpg");
        assert_eq!(s.image.uri, "img/1.jpg");
        let s: CaptionSample = serde_json::from_str(
            r#"{"id":"s1","image":{"id":"i1","uri":"u"},"caption":"A dog.","reference_caption":"x"}"#,
        )
        .unwrap();
        assert_eq!(s.image.id, "i1");
        assert_eq!(s.reference_caption.as_deref(), Some("x"));
    }

    #[test]
    fn zero_vector_cannot_be_normalized() {
        assert_eq!(
            EmbeddingVector::normalized(vec![0.0, 0.0]),
            Err(ModelError::ZeroNorm)
        );
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
        assert_eq!(EmbeddingVector::new(vec![]), Err(ModelError::ZeroDim));
    }

    #[test]
    fn similarity_values_are_clamped() {
        let m = SimilarityMatrix::from_rows(&[vec![1.0 + 1e-15, -1.0 - 1e-15]]).unwrap();
        assert_eq!(m.values(), &[1.0, -1.0]);
        assert!(SimilarityMatrix::from_row_major(2, 2, vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn dedup_is_idempotent(raws in prop::collection::vec("[a-cA-C ]{0,6}", 0..20)) {
            let once = build_entity_set(&raws);
            let twice = build_entity_set(once.surfaces());
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.len() <= raws.len());
        }

        #[test]
        fn normalized_head_is_trimmed(raw in "[ a-zA-Z]{1,20}") {
            if let Ok(e) = normalize_entity(&raw) {
                prop_assert!(!e.head().is_empty());
                prop_assert_eq!(e.head().trim(), e.head());
                let rebuilt = e.attributes().iter().cloned()
                    .chain(std::iter::once(e.head().to_string()))
                    .collect::<Vec<_>>().join(" ");
                prop_assert_eq!(rebuilt, e.surface());
            }
        }
    }
}
