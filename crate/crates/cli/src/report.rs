//! Human-readable tables on stdout and their JSON twins on disk.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub struct Table {
    title: String,
    rows: Vec<(String, String)>,
}

impl Table {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, key: impl Into<String>, value: impl Display) -> &mut Self {
        self.rows.push((key.into(), value.to_string()));
        self
    }

    pub fn opt(&mut self, key: impl Into<String>, value: Option<f64>) -> &mut Self {
        let v = value.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        self.row(key, v)
    }

    pub fn print(&self) {
        let width = self.rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        println!("{}", self.title);
        for (k, v) in &self.rows {
            println!("  {k:<width$}  {v}");
        }
    }
}

/// `scores.jsonl` -> `scores.report.json`, in the same directory.
pub fn report_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.report.json"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}
