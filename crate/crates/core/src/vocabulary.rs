//! Concept vocabularies assembled from newline-delimited concept lists.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::fold_phrase;

#[derive(Debug, Error)]
pub enum VocabularyError {
    #[error("cannot read concept list {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary is empty after merging {0} source(s)")]
    Empty(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularySource {
    pub name: String,
    /// Distinct concepts contributed by this file alone.
    pub concepts: usize,
}

/// Casefolded concept set with lexicographic iteration order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    concepts: BTreeSet<String>,
    sources: Vec<VocabularySource>,
}

impl Vocabulary {
    pub fn from_concepts<I, S>(concepts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary::default();
        vocab.add_source("inline", concepts);
        vocab
    }

    fn add_source<I, S>(&mut self, name: &str, concepts: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let local: BTreeSet<String> = concepts
            .into_iter()
            .map(|c| fold_phrase(c.as_ref()))
            .filter(|c| !c.is_empty())
            .collect();
        self.sources.push(VocabularySource {
            name: name.to_owned(),
            concepts: local.len(),
        });
        self.concepts.extend(local);
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn contains(&self, concept: &str) -> bool {
        self.concepts.contains(&fold_phrase(concept))
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.concepts.iter().map(String::as_str)
    }

    pub fn concepts(&self) -> &BTreeSet<String> {
        &self.concepts
    }

    pub fn sources(&self) -> &[VocabularySource] {
        &self.sources
    }

    /// SHA-256 over the sorted concept list; independent of source order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.concepts {
            h.update(c.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Parses one concept list: one concept per line, `#` starts a comment line.
pub fn parse_concept_list(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

pub fn build_vocabulary<P: AsRef<Path>>(source_files: &[P]) -> Result<Vocabulary, VocabularyError> {
    let mut vocab = Vocabulary::default();
    for path in source_files {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| VocabularyError::Read {
            path: path.to_owned(),
            source,
        })?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        vocab.add_source(&name, parse_concept_list(&text));
    }
    if vocab.is_empty() {
        return Err(VocabularyError::Empty(source_files.len()));
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn list(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn union_of_two_lists() {
        let dir = tempfile::tempdir().unwrap();
        let a = list(dir.path(), "a.txt", "a\nb\n");
        let b = list(dir.path(), "b.txt", "b\nc\n");
        let v = build_vocabulary(&[a, b]).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.sources()[0].concepts, 2);
        assert_eq!(v.iter().collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn duplicates_and_comments_collapse() {
        let dir = tempfile::tempdir().unwrap();
        let a = list(dir.path(), "a.txt", "# header\na\nA\n\n  a  \n");
        let v = build_vocabulary(&[a]).unwrap();
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn unreadable_file_names_the_path() {
        let err = build_vocabulary(&["/nonexistent/concepts.txt"]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/concepts.txt"));
    }

    #[test]
    fn empty_union_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let a = list(dir.path(), "a.txt", "# nothing\n");
        assert!(matches!(
            build_vocabulary(&[a]),
            Err(VocabularyError::Empty(1))
        ));
    }

    proptest! {
        #[test]
        fn union_is_order_independent(
            a in prop::collection::vec("[a-d]{1,2}", 0..8),
            b in prop::collection::vec("[a-d]{1,2}", 0..8),
            c in prop::collection::vec("[a-d]{1,2}", 0..8),
        ) {
            let merge = |parts: &[&Vec<String>]| {
                let mut v = Vocabulary::default();
                for (i, p) in parts.iter().enumerate() {
                    v.add_source(&i.to_string(), p.iter());
                }
                v.concepts().clone()
            };
            prop_assert_eq!(merge(&[&a, &b, &c]), merge(&[&c, &a, &b]));
            prop_assert_eq!(merge(&[&a, &b]), merge(&[&b, &a]));
        }
    }
}
