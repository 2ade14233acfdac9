//! JSON-lines interchange: snippet files and the append-only label log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binfile::atomic_write;
use crate::error::{Error, Result};
use crate::mutate::CodeSnippet;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryLabels {
    pub error_lines: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetFileEntry {
    pub snippet_id: u32,
    pub language: String,
    #[serde(default)]
    pub task: String,
    pub lines: Vec<String>,
    /// Generation-time token confidences, one list per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidences: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<EntryLabels>,
}

impl SnippetFileEntry {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.confidences {
            if c.len() != self.lines.len() {
                return Err(Error::Dimension {
                    expected: self.lines.len(),
                    actual: c.len(),
                    context: format!("confidence lists of snippet {}", self.snippet_id),
                });
            }
        }
        if let Some(l) = &self.labels {
            if let Some(e) = l.error_lines.iter().find(|&&e| e >= self.lines.len()) {
                return Err(Error::Argument(format!(
                    "snippet {}: error line {e} out of range",
                    self.snippet_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_snippet(&self) -> Result<CodeSnippet> {
        CodeSnippet::new(self.snippet_id, self.language.clone(), self.lines.clone())
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn jsonl_bytes<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("in-memory serialization");
        out.push(b'\n');
    }
    out
}

pub fn read_snippet_file(path: &Path) -> Result<Vec<SnippetFileEntry>> {
    let entries: Vec<SnippetFileEntry> = read_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    for (n, e) in entries.iter().enumerate() {
        e.validate().map_err(|err| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            reason: err.to_string(),
        })?;
        if !seen.insert(e.snippet_id) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                reason: format!("duplicate snippet_id {}", e.snippet_id),
            });
        }
    }
    Ok(entries)
}

pub fn write_snippet_file(path: &Path, entries: &[SnippetFileEntry]) -> Result<()> {
    atomic_write(path, &jsonl_bytes(entries))
}

pub fn read_jsonl_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(path)
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    atomic_write(path, &jsonl_bytes(items))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub snippet_id: u32,
    pub error_lines: Vec<usize>,
    /// Milliseconds since the Unix epoch.
    pub stored_at: u64,
}

/// Latest record per snippet in file order; a missing file reads as empty.
pub fn read_labels(path: &Path) -> Result<BTreeMap<u32, LabelRecord>> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let records: Vec<LabelRecord> = read_jsonl(path)?;
    Ok(records.into_iter().map(|r| (r.snippet_id, r)).collect())
}

/// Append one record as a single write and flush it to disk.
pub fn append_label(path: &Path, record: &LabelRecord) -> Result<()> {
    let mut line = serde_json::to_vec(record).expect("in-memory serialization");
    line.push(b'\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(&line)
        .and_then(|_| f.sync_data())
        .map_err(|e| Error::io(path, e))
}

/// Error lines per snippet: the label log overrides inline labels.
pub fn effective_labels(
    entries: &[SnippetFileEntry],
    log: &BTreeMap<u32, LabelRecord>,
) -> BTreeMap<u32, Vec<usize>> {
    let mut out = BTreeMap::new();
    for e in entries {
        if let Some(l) = &e.labels {
            out.insert(e.snippet_id, l.error_lines.clone());
        }
        if let Some(r) = log.get(&e.snippet_id) {
            out.insert(e.snippet_id, r.error_lines.clone());
        }
    }
    out
}
