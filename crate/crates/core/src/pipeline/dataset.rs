//! Line-oriented dataset and external-score readers.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::CaptionSample;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("duplicate sample id {id:?} (line {line})")]
    DuplicateId { id: String, line: usize },
}

/// Streams `CaptionSample` rows from a JSONL file, skipping blank lines.
pub struct DatasetReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line: usize,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let file = File::open(path).map_err(|source| DatasetError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(Self {
            path: path.to_owned(),
            lines: BufReader::new(file).lines(),
            line: 0,
        })
    }
}

impl Iterator for DatasetReader {
    type Item = Result<(usize, CaptionSample), DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let raw = self.lines.next()?;
            self.line += 1;
            let raw = match raw {
                Ok(r) => r,
                Err(source) => {
                    return Some(Err(DatasetError::Io {
                        path: self.path.clone(),
                        source,
                    }))
                }
            };
            if raw.trim().is_empty() {
                continue;
            }
            return Some(
                serde_json::from_str(&raw)
                    .map(|s| (self.line, s))
                    .map_err(|e| DatasetError::Parse {
                        path: self.path.clone(),
                        line: self.line,
                        message: e.to_string(),
                    }),
            );
        }
    }
}

/// Reads a whole dataset, rejecting duplicate ids.
pub fn read_dataset(path: &Path) -> Result<Vec<CaptionSample>, DatasetError> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for row in DatasetReader::open(path)? {
        let (line, sample) = row?;
        if seen.insert(sample.id.clone(), line).is_some() {
            return Err(DatasetError::DuplicateId { id: sample.id, line });
        }
        out.push(sample);
    }
    Ok(out)
}

/// Parses `id<TAB>value` lines; `#` comments and blank lines are skipped.
pub fn read_external_scores(path: &Path) -> Result<HashMap<String, f64>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut out = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let err = |message: String| DatasetError::Parse {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let (id, value) = line
            .split_once('\t')
            .ok_or_else(|| err("expected `id<TAB>value`".into()))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|e| err(format!("bad value {value:?}: {e}")))?;
        if !value.is_finite() {
            return Err(err(format!("non-finite value {value}")));
        }
        if out.insert(id.to_owned(), value).is_some() {
            return Err(DatasetError::DuplicateId {
                id: id.to_owned(),
                line: i + 1,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_rows_and_reports_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(
            &p,
            "{\"id\":\"a\",\"image\":\"img/a.jpg\",\"caption\":\"A dog.\"}\n\n{\"id\":\"b\",\"image\":{\"id\":\"b\",\"uri\":\"b.jpg\"},\"caption\":\"x\",\"reference_caption\":\"y\"}\n",
        )
        .unwrap();
        let rows = read_dataset(&p).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].image.id, "img/a.jpg");
        assert_eq!(rows[1].reference_caption.as_deref(), Some("y"));

        std::fs::write(&p, "{\"id\":\"a\",\"image\":\"i\",\"caption\":\"c\"}\n{\"id\":").unwrap();
        assert!(matches!(read_dataset(&p), Err(DatasetError::Parse { line: 2, .. })));

        std::fs::write(&p, "{\"id\":\"a\",\"image\":\"i\",\"caption\":\"c\"}\n{\"id\":\"a\",\"image\":\"i\",\"caption\":\"c\"}\n").unwrap();
        assert!(matches!(read_dataset(&p), Err(DatasetError::DuplicateId { line: 2, .. })));
    }

    #[test]
    fn external_scores() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ppl.tsv");
        std::fs::write(&p, "# perplexity\na\t12.5\nb\t3\n").unwrap();
        let s = read_external_scores(&p).unwrap();
        assert_eq!(s["a"], 12.5);
        assert_eq!(s["b"], 3.0);
        std::fs::write(&p, "a 12.5\n").unwrap();
        assert!(matches!(read_external_scores(&p), Err(DatasetError::Parse { line: 1, .. })));
    }
}
