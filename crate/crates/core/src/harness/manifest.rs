//! JSONL manifests: one `{"path", "label", "subset", "id"?}` object per line.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{D3Error, Result};
use crate::record::Label;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: Label,
    pub subset: String,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, path: impl Into<PathBuf>, label: Label, subset: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
            label,
            subset: subset.into(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    path: String,
    label: Label,
    subset: String,
    id: Option<String>,
}

/// Reads a manifest file. Relative paths are resolved against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| D3Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")))
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |reason: String| D3Error::ManifestError { line, reason };
        let l: Line = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if l.path.is_empty() {
            return Err(err("field `path` is empty".into()));
        }
        if l.subset.is_empty() {
            return Err(err("field `subset` is empty".into()));
        }
        let id = l.id.unwrap_or_else(|| l.path.clone());
        if !seen.insert(id.clone()) {
            return Err(err(format!("duplicate id {id:?}")));
        }
        let p = PathBuf::from(&l.path);
        let path = if p.is_absolute() { p } else { base_dir.join(p) };
        entries.push(ManifestEntry {
            id,
            path,
            label: l.label,
            subset: l.subset,
        });
    }
    Ok(entries)
}

/// Writes entries as JSONL, paths as given.
pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| D3Error::io(path, e))
}
