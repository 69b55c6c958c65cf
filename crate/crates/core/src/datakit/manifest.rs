use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::{read_features, FeatureSequence};
use crate::binio::canonical_json;
use crate::error::{Error, FormatError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

/// One JSON-lines record. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub features: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Pre-feature signal used by the trainable-encoder baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl ManifestEntry {
    /// Untagged entries count as training data.
    pub fn split_or_train(&self) -> Split {
        self.split.unwrap_or(Split::Train)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            root: root.into(),
            entries,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(line)
                .map_err(|e| FormatError::Header(format!("manifest line {}: {e}", i + 1)))?;
            entries.push(e);
        }
        Ok(Self::new(root, entries))
    }

    /// Parse the manifest without touching the referenced files.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    /// Parse and check that every referenced file exists and has a valid
    /// header.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m = Self::read(path)?;
        for e in &m.entries {
            for rel in std::iter::once(&e.features).chain(e.raw.as_ref()) {
                let p = m.resolve(rel);
                let bytes = std::fs::read(&p).map_err(|err| Error::io(&p, err))?;
                FeatureSequence::peek_header(&bytes).map_err(|err| match err {
                    Error::Format(f) => Error::Format(FormatError::Header(format!("{}: {f}", p.display()))),
                    other => other,
                })?;
            }
        }
        Ok(m)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&canonical_json(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_features(&self, index: usize) -> Result<FeatureSequence> {
        read_features(self.resolve(&self.entry(index)?.features))
    }

    pub fn load_raw(&self, index: usize) -> Result<FeatureSequence> {
        let e = self.entry(index)?;
        let rel = e.raw.as_ref().ok_or_else(|| {
            Error::Input(format!("manifest entry {index} ({}) has no raw signal", e.features))
        })?;
        read_features(self.resolve(rel))
    }

    fn entry(&self, index: usize) -> Result<&ManifestEntry> {
        self.entries.get(index).ok_or(Error::Index {
            what: "manifest",
            index,
            size: self.entries.len(),
        })
    }

    pub fn with_split(&self, split: Split) -> Self {
        let entries = self
            .entries
            .iter()
            .filter(|e| e.split_or_train() == split)
            .cloned()
            .collect();
        Self::new(self.root.clone(), entries)
    }

    /// The first `n` entries; prefixes of one manifest are nested.
    pub fn take(&self, n: usize) -> Self {
        Self::new(self.root.clone(), self.entries.iter().take(n).cloned().collect())
    }

    /// SHA-256 over the canonical manifest text and every referenced file.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.to_jsonl()?.as_bytes());
        for e in &self.entries {
            for rel in std::iter::once(&e.features).chain(e.raw.as_ref()) {
                let p = self.resolve(rel);
                let bytes = std::fs::read(&p).map_err(|err| Error::io(&p, err))?;
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}
