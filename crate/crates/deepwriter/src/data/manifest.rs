//! JSON-lines dataset manifests, the 4:1:1 per-writer split, and the stable
//! writer-label to class-index mapping.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DwError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One dataset item: an image path, its writer label, and its split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub writer: String,
    pub split: Split,
}

/// Writer labels mapped to contiguous class indices in sorted label order,
/// so the mapping is stable across runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    labels: Vec<String>,
}

impl LabelTable {
    pub fn from_entries(entries: &[ManifestEntry]) -> Self {
        let mut labels: Vec<String> = entries.iter().map(|e| e.writer.clone()).collect();
        labels.sort();
        labels.dedup();
        LabelTable { labels }
    }

    pub fn from_labels(mut labels: Vec<String>) -> Self {
        labels.sort();
        labels.dedup();
        LabelTable { labels }
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Assigns train/val/test splits per writer at the 4:1:1 ratio: items are
/// shuffled by seed, then counted round(n*4/6) / round(n*1/6) / remainder,
/// with every split guaranteed at least one item.
pub fn split_per_writer(
    items: &[(String, PathBuf)],
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    let mut by_writer: BTreeMap<&str, Vec<&PathBuf>> = BTreeMap::new();
    for (writer, path) in items {
        by_writer.entry(writer).or_default().push(path);
    }
    let mut out = Vec::with_capacity(items.len());
    for (widx, (writer, paths)) in by_writer.into_iter().enumerate() {
        let n = paths.len();
        if n < 3 {
            return Err(DwError::Domain(format!(
                "writer {writer} has only {n} items; at least 3 are needed for a 4:1:1 split"
            )));
        }
        let mut order: Vec<&PathBuf> = paths;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (widx as u64).wrapping_mul(0x9e3779b97f4a7c15));
        order.shuffle(&mut rng);

        let mut n_train = ((n as f64 * 4.0 / 6.0).round() as usize).max(1);
        let mut n_val = ((n as f64 / 6.0).round() as usize).max(1);
        // remainder goes to test; shrink train (then val) until test has one
        while n_train + n_val >= n {
            if n_train > 1 {
                n_train -= 1;
            } else {
                n_val -= 1;
            }
        }
        for (i, path) in order.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            out.push(ManifestEntry {
                path: path.clone(),
                writer: writer.to_string(),
                split,
            });
        }
    }
    Ok(out)
}

/// One JSON object per line with keys path/writer/split.
pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e).map_err(|err| DwError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        })?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|err| DwError::Io {
        path: path.to_path_buf(),
        message: err.to_string(),
    })
}

/// Reads a JSON-lines manifest. Entry paths are resolved relative to the
/// manifest's directory and must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| DwError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DwError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| DwError::Io {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        if entry.path.is_relative() {
            entry.path = base.join(&entry.path);
        }
        if !entry.path.exists() {
            return Err(DwError::Io {
                path: entry.path.clone(),
                message: "manifest references a missing file".into(),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Writes entries with paths stored relative to the manifest directory when
/// possible, keeping corpora relocatable.
pub fn write_manifest_relative(
    entries: &[ManifestEntry],
    manifest_path: impl AsRef<Path>,
) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let rel: Vec<ManifestEntry> = entries
        .iter()
        .map(|e| ManifestEntry {
            path: e.path.strip_prefix(base).unwrap_or(&e.path).to_path_buf(),
            writer: e.writer.clone(),
            split: e.split,
        })
        .collect();
    write_manifest(&rel, manifest_path)
}
