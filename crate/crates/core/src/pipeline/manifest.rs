//! Ranking, top-fraction selection, and the JSONL manifest format.
//!
//! A manifest file is one header line followed by one line per ranked sample:
//!
//! ```text
//! {"record":"header","strategy":{..},"data_ratio":0.4,"config_fingerprint":"..","count":N,"selected":K}
//! {"record":"entry","sample_id":"..","score":0.93,"rank":1,"selected":true}
//! ```

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ScoreRecord, SelectionStrategy};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("data ratio must be in (0, 1], got {0}")]
    Ratio(f64),
    #[error("no score records to rank")]
    NoRecords,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{0}: manifest has a header but no entries")]
    Empty(PathBuf),
    #[error("{path}: {message}")]
    Inconsistent { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub score: f64,
    pub rank: usize,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionManifest {
    pub strategy: SelectionStrategy,
    pub data_ratio: f64,
    pub config_fingerprint: String,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header {
        strategy: SelectionStrategy,
        data_ratio: f64,
        config_fingerprint: String,
        count: usize,
        selected: usize,
    },
    Entry(ManifestEntry),
}

/// Number of samples kept at `ratio`. The epsilon absorbs representation
/// error such as `0.7 * 10 = 7.000000000000001`.
pub fn selection_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

fn rank_order(a: &ScoreRecord, b: &ScoreRecord) -> Ordering {
    a.degenerate
        .cmp(&b.degenerate)
        .then_with(|| b.score.total_cmp(&a.score))
        .then_with(|| a.id.cmp(&b.id))
}

/// Ranks by score descending with sample id as tie-break; degenerate
/// records (empty candidate or reference set) always rank after the rest.
pub fn select_top_fraction(
    records: &[ScoreRecord],
    ratio: f64,
    strategy: SelectionStrategy,
    config_fingerprint: impl Into<String>,
) -> Result<SelectionManifest, ManifestError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(ManifestError::Ratio(ratio));
    }
    if records.is_empty() {
        return Err(ManifestError::NoRecords);
    }
    let mut sorted: Vec<&ScoreRecord> = records.iter().collect();
    sorted.sort_by(|a, b| rank_order(a, b));
    let keep = selection_count(ratio, sorted.len());
    let entries = sorted
        .into_iter()
        .enumerate()
        .map(|(i, r)| ManifestEntry {
            sample_id: r.id.clone(),
            score: r.score,
            rank: i + 1,
            selected: i < keep,
        })
        .collect();
    Ok(SelectionManifest {
        strategy,
        data_ratio: ratio,
        config_fingerprint: config_fingerprint.into(),
        entries,
    })
}

impl SelectionManifest {
    pub fn selected(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.selected)
    }

    pub fn selected_count(&self) -> usize {
        self.selected().count()
    }

    /// A warning text when the manifest was produced under another config.
    pub fn fingerprint_warning(&self, current: &str) -> Option<String> {
        (self.config_fingerprint != current).then(|| {
            format!(
                "manifest fingerprint {} does not match the current configuration {}",
                self.config_fingerprint, current
            )
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Line::Header {
            strategy: self.strategy.clone(),
            data_ratio: self.data_ratio,
            config_fingerprint: self.config_fingerprint.clone(),
            count: self.entries.len(),
            selected: self.selected_count(),
        })
        .expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(&Line::Entry(e.clone())).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_manifest(manifest: &SelectionManifest, path: &Path) -> Result<(), ManifestError> {
    atomic_write(path, manifest.to_jsonl().as_bytes())
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), ManifestError> {
    let io = |source| ManifestError::Io {
        path: path.to_owned(),
        source,
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

pub fn read_manifest(path: &Path) -> Result<SelectionManifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_owned(),
        source,
    })?;
    let parse_err = |line: usize, message: String| ManifestError::Parse {
        path: path.to_owned(),
        line,
        message,
    };
    let mut header = None;
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(raw).map_err(|e| parse_err(n, e.to_string()))?;
        match (line, header.is_some()) {
            (h @ Line::Header { .. }, false) => header = Some(h),
            (Line::Header { .. }, true) => return Err(parse_err(n, "second header record".into())),
            (Line::Entry(_), false) => return Err(parse_err(n, "entry before header".into())),
            (Line::Entry(e), true) => entries.push(e),
        }
    }
    let Some(Line::Header {
        strategy,
        data_ratio,
        config_fingerprint,
        count,
        selected,
    }) = header
    else {
        return Err(parse_err(1, "missing header record".into()));
    };
    if entries.is_empty() {
        return Err(ManifestError::Empty(path.to_owned()));
    }
    let inconsistent = |message: String| ManifestError::Inconsistent {
        path: path.to_owned(),
        message,
    };
    if entries.len() != count {
        return Err(inconsistent(format!("header declares {count} entries, found {}", entries.len())));
    }
    let keep = selection_count(data_ratio, count);
    for (i, e) in entries.iter().enumerate() {
        if e.rank != i + 1 {
            return Err(inconsistent(format!("entry {} has rank {}", i + 1, e.rank)));
        }
        if e.selected != (e.rank <= keep) {
            return Err(inconsistent(format!("rank {} selection flag disagrees with ratio", e.rank)));
        }
    }
    if keep != selected {
        return Err(inconsistent(format!("header declares {selected} selected, ratio implies {keep}")));
    }
    Ok(SelectionManifest {
        strategy,
        data_ratio,
        config_fingerprint,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, score: f64) -> ScoreRecord {
        ScoreRecord::plain(id, score)
    }

    fn select(records: &[ScoreRecord], ratio: f64) -> SelectionManifest {
        select_top_fraction(records, ratio, SelectionStrategy::default(), "fp").unwrap()
    }

    #[test]
    fn ceil_arithmetic() {
        let rs: Vec<_> = (0..10).map(|i| rec(&format!("s{i}"), i as f64)).collect();
        assert_eq!(select(&rs, 0.2).selected_count(), 2);
        assert_eq!(select(&rs, 0.7).selected_count(), 7);
        assert_eq!(select(&rs, 0.25).selected_count(), 3);
        let all = select(&rs, 1.0);
        assert_eq!(all.selected_count(), 10);
        assert_eq!(all.entries[0].sample_id, "s9");
    }

    #[test]
    fn tie_goes_to_lower_id() {
        let m = select(&[rec("b", 0.5), rec("a", 0.5), rec("c", 0.9)], 0.5);
        let order: Vec<_> = m.entries.iter().map(|e| e.sample_id.as_str()).collect();
        assert_eq!(order, ["c", "a", "b"]);
        assert_eq!(m.selected_count(), 2);
    }

    #[test]
    fn degenerate_ranks_last() {
        let mut empty = rec("a", 0.0);
        empty.degenerate = true;
        let m = select(&[empty, rec("z", 0.0)], 0.5);
        assert_eq!(m.entries[1].sample_id, "a");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            select_top_fraction(&[rec("a", 1.0)], 0.0, SelectionStrategy::default(), ""),
            Err(ManifestError::Ratio(_))
        ));
        assert!(matches!(
            select_top_fraction(&[], 0.5, SelectionStrategy::default(), ""),
            Err(ManifestError::NoRecords)
        ));
    }

    #[test]
    fn round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let m = select(&[rec("a", 0.1), rec("b", 1.0 / 3.0), rec("c", 0.9)], 0.4);
        write_manifest(&m, &p).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), m);
        assert!(m.fingerprint_warning("fp").is_none());
        assert!(m.fingerprint_warning("other").is_some());

        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let cut = &lines[2][..lines[2].len() / 2];
        lines[2] = cut;
        fs::write(&p, lines.join("\n")).unwrap();
        match read_manifest(&p) {
            Err(ManifestError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        fs::write(&p, text.lines().next().unwrap()).unwrap();
        assert!(matches!(read_manifest(&p), Err(ManifestError::Empty(_))));
    }
}
