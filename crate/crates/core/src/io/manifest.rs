//! Corpus manifests: `utt_id<TAB>path[<TAB>speaker]` per line. Relative
//! paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub path: PathBuf,
    pub speaker_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    /// SHA-256 of the manifest text.
    pub digest: String,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&f.len()) || f.iter().any(|s| s.is_empty()) {
                return Err(err(format!("expected utt_id, path and optional speaker, got {line:?}")));
            }
            if !seen.insert(f[0].to_string()) {
                return Err(err(format!("duplicate utterance id {}", f[0])));
            }
            let p = base.join(f[1]);
            if !p.is_file() {
                return Err(err(format!("no such file {}", p.display())));
            }
            entries.push(ManifestEntry {
                utterance_id: f[0].to_string(),
                path: p,
                speaker_id: f.get(2).map(|s| s.to_string()),
            });
        }
        Ok(Self {
            entries,
            digest: sha256_hex(text.as_bytes()),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
