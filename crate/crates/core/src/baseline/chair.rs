//! Closed-vocabulary hallucination rates (CHAIR).
//!
//! Captions are matched against a fixed class list plus synonyms, scanning
//! tokens left to right and preferring the longest phrase at each position.
//! The last token of a phrase also matches its simple plural forms.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{fold_phrase, normalize_entity, EntitySet};

#[derive(Debug, Error)]
pub enum ClosedVocabularyError {
    #[error("cannot read closed vocabulary {path}: {message}")]
    Read { path: String, message: String },
    #[error("synonym {synonym:?} maps to unknown class {class:?}")]
    UnknownClass { synonym: String, class: String },
    #[error("closed vocabulary has no classes")]
    Empty,
}

#[derive(Debug, Deserialize)]
struct ClosedVocabularyFile {
    classes: Vec<String>,
    #[serde(default)]
    synonyms: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClosedVocabulary {
    classes: BTreeSet<String>,
    synonym_map: BTreeMap<String, String>,
    #[serde(skip)]
    phrases: Vec<(Vec<String>, String)>,
}

impl ClosedVocabulary {
    pub fn new<C, S>(classes: C, synonyms: S) -> Result<Self, ClosedVocabularyError>
    where
        C: IntoIterator,
        C::Item: AsRef<str>,
        S: IntoIterator<Item = (String, String)>,
    {
        let classes: BTreeSet<String> = classes
            .into_iter()
            .map(|c| fold_phrase(c.as_ref()))
            .filter(|c| !c.is_empty())
            .collect();
        if classes.is_empty() {
            return Err(ClosedVocabularyError::Empty);
        }
        let mut synonym_map = BTreeMap::new();
        for (syn, class) in synonyms {
            let (syn, class) = (fold_phrase(&syn), fold_phrase(&class));
            if !classes.contains(&class) {
                return Err(ClosedVocabularyError::UnknownClass { synonym: syn, class });
            }
            synonym_map.insert(syn, class);
        }
        let mut phrases: Vec<(Vec<String>, String)> = classes
            .iter()
            .map(|c| (c.clone(), c.clone()))
            .chain(synonym_map.iter().map(|(s, c)| (s.clone(), c.clone())))
            .map(|(p, c)| (p.split(' ').map(str::to_owned).collect(), c))
            .collect();
        // longest first; lexicographic within a length for determinism
        phrases.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        phrases.dedup_by(|a, b| a.0 == b.0);
        Ok(Self {
            classes,
            synonym_map,
            phrases,
        })
    }

    /// Reads `{"classes": [...], "synonyms": {"phrase": "class"}}`.
    pub fn load(path: &Path) -> Result<Self, ClosedVocabularyError> {
        let read_err = |message: String| ClosedVocabularyError::Read {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let file: ClosedVocabularyFile = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        Self::new(file.classes, file.synonyms)
    }

    pub fn classes(&self) -> &BTreeSet<String> {
        &self.classes
    }

    pub fn canonical(&self, phrase: &str) -> Option<&str> {
        let p = fold_phrase(phrase);
        self.classes
            .get(&p)
            .map(String::as_str)
            .or_else(|| self.synonym_map.get(&p).map(String::as_str))
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn token_matches(token: &str, word: &str, last: bool) -> bool {
    if token == word {
        return true;
    }
    if !last {
        return false;
    }
    if let Some(stem) = token.strip_suffix("es") {
        if stem == word {
            return true;
        }
    }
    if let Some(stem) = token.strip_suffix('s') {
        if stem == word {
            return true;
        }
    }
    if let (Some(stem), Some(wstem)) = (token.strip_suffix("ies"), word.strip_suffix('y')) {
        if stem == wstem {
            return true;
        }
    }
    false
}

/// Canonical classes mentioned in `caption`, in order of first mention.
pub fn chair_parse(caption: &str, vocab: &ClosedVocabulary) -> EntitySet {
    let tokens = tokenize(caption);
    let mut out = EntitySet::new();
    let mut i = 0;
    while i < tokens.len() {
        let hit = vocab.phrases.iter().find(|(words, _)| {
            words.len() <= tokens.len() - i
                && words
                    .iter()
                    .enumerate()
                    .all(|(k, w)| token_matches(&tokens[i + k], w, k + 1 == words.len()))
        });
        match hit {
            Some((words, class)) => {
                out.insert(normalize_entity(class).expect("classes are non-empty"));
                i += words.len();
            }
            None => i += 1,
        }
    }
    out
}

/// Hallucinated mentions over all mentions; zero when nothing is mentioned.
pub fn chair_i(mentioned: &EntitySet, gt_objects: &EntitySet) -> f64 {
    if mentioned.is_empty() {
        return 0.0;
    }
    mentioned.difference(gt_objects).len() as f64 / mentioned.len() as f64
}

/// Sentences with at least one hallucination over all sentences.
pub fn chair_s(sentences: &[EntitySet], gt_objects: &EntitySet) -> f64 {
    if sentences.is_empty() {
        return 0.0;
    }
    let bad = sentences.iter().filter(|s| !s.is_subset(gt_objects)).count();
    bad as f64 / sentences.len() as f64
}

/// Splits after `.`, `!` or `?` when followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    out.push(&text[start..i + c.len_utf8()]);
                    start = i + c.len_utf8();
                }
            }
        }
    }
    out.push(&text[start..]);
    out.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairRecord {
    pub chair_i: f64,
    pub chair_s: f64,
    pub mentioned: usize,
    pub hallucinated: usize,
    pub sentences: usize,
    pub hallucinated_sentences: usize,
}

/// Instance- and sentence-level rates for one caption.
pub fn chair_caption(caption: &str, vocab: &ClosedVocabulary, gt_objects: &EntitySet) -> ChairRecord {
    let mentioned = chair_parse(caption, vocab);
    let per_sentence: Vec<EntitySet> = split_sentences(caption)
        .into_iter()
        .map(|s| chair_parse(s, vocab))
        .collect();
    let hallucinated_sentences = per_sentence.iter().filter(|s| !s.is_subset(gt_objects)).count();
    ChairRecord {
        chair_i: chair_i(&mentioned, gt_objects),
        chair_s: chair_s(&per_sentence, gt_objects),
        mentioned: mentioned.len(),
        hallucinated: mentioned.difference(gt_objects).len(),
        sentences: per_sentence.len(),
        hallucinated_sentences,
    }
}

/// Maps annotated labels onto canonical classes; labels outside the
/// vocabulary are kept as-is.
pub fn canonical_objects<I, S>(labels: I, vocab: &ClosedVocabulary) -> EntitySet
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    labels
        .into_iter()
        .filter_map(|l| {
            let l = l.as_ref();
            normalize_entity(vocab.canonical(l).unwrap_or(l)).ok()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_entity_set;

    fn coco() -> ClosedVocabulary {
        ClosedVocabulary::new(
            ["dog", "frisbee", "hot dog", "person", "bus", "cat", "car", "tree"],
            [("man".to_string(), "person".to_string()), ("puppy".to_string(), "dog".to_string())],
        )
        .unwrap()
    }

    #[test]
    fn plural_tokens_match() {
        assert_eq!(chair_parse("two dogs and a frisbee", &coco()).surfaces(), ["dog", "frisbee"]);
        assert_eq!(chair_parse("Buses!", &coco()).surfaces(), ["bus"]);
    }

    #[test]
    fn out_of_vocabulary_is_missed() {
        assert!(chair_parse("a quokka on a rock", &coco()).is_empty());
    }

    #[test]
    fn longest_match_wins() {
        assert_eq!(chair_parse("hot dog", &coco()).surfaces(), ["hot dog"]);
        assert_eq!(chair_parse("a man with a puppy", &coco()).surfaces(), ["person", "dog"]);
    }

    #[test]
    fn synonyms_must_map_to_classes() {
        let err = ClosedVocabulary::new(["dog"], [("kitty".to_string(), "cat".to_string())]);
        assert!(matches!(err, Err(ClosedVocabularyError::UnknownClass { .. })));
    }

    #[test]
    fn chair_i_arithmetic() {
        let gt = build_entity_set(["dog", "cat", "car"]);
        assert_eq!(chair_i(&build_entity_set(["dog", "cat", "car", "tree"]), &gt), 0.25);
        assert_eq!(chair_i(&build_entity_set(["dog"]), &gt), 0.0);
        assert_eq!(chair_i(&EntitySet::new(), &gt), 0.0);
    }

    #[test]
    fn chair_s_arithmetic() {
        let gt = build_entity_set(["dog"]);
        let ok = build_entity_set(["dog"]);
        let bad = build_entity_set(["cat"]);
        let s = [bad.clone(), ok.clone(), bad.clone(), ok.clone(), ok.clone()];
        assert_eq!(chair_s(&s, &gt), 0.4);
        assert_eq!(chair_s(&[ok.clone(), ok], &gt), 0.0);
        assert_eq!(chair_s(&[bad.clone(), bad], &gt), 1.0);
        assert_eq!(chair_s(&[], &gt), 0.0);
    }

    #[test]
    fn sentence_split_needs_trailing_whitespace() {
        assert_eq!(split_sentences("A dog. A cat! Is it 3.5 m? Yes"), ["A dog.", "A cat!", "Is it 3.5 m?", "Yes"]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn caption_record() {
        let gt = build_entity_set(["dog"]);
        let r = chair_caption("A dog runs. A cat sleeps near a car.", &coco(), &gt);
        assert_eq!((r.mentioned, r.hallucinated, r.sentences, r.hallucinated_sentences), (3, 2, 2, 1));
        assert!((r.chair_i - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.chair_s, 0.5);
    }

    #[test]
    fn loads_json_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("coco.json");
        std::fs::write(&p, r#"{"classes":["dog","person"],"synonyms":{"man":"person"}}"#).unwrap();
        let v = ClosedVocabulary::load(&p).unwrap();
        assert_eq!(v.canonical("Man"), Some("person"));
        assert_eq!(canonical_objects(["man", "dog", "kiwi"], &v).surfaces(), ["person", "dog", "kiwi"]);
    }
}
