//! Dataset manifests: a JSON file naming image/label pairs under a root.

use crate::error::CoreError;
use crate::Result;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Source,
    Target,
    TargetAugmented,
}

/// One dataset item. Paths are relative to the manifest root unless
/// absolute. `label: None` marks an explicitly unlabeled image.
/// `domain` overrides the manifest-level domain for merged training
/// manifests that mix source and augmented-target items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
}

/// A dataset description: root directory plus entries, tagged with the
/// split and domain they belong to.
///
/// `root` may itself be relative, in which case it is resolved against
/// the directory containing the manifest file, keeping manifests
/// relocatable alongside their data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: String,
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
    pub domain: Domain,
}

/// A manifest entry with paths resolved to absolute form.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedEntry {
    /// Entry path exactly as written in the manifest; the stable key
    /// for per-image random streams and reports.
    pub key: String,
    pub image: PathBuf,
    pub label: Option<PathBuf>,
    pub domain: Domain,
}

impl DatasetManifest {
    pub fn new(root: impl Into<String>, split: Split, domain: Domain) -> Self {
        DatasetManifest {
            root: root.into(),
            entries: Vec::new(),
            split,
            domain,
        }
    }

    /// Reads a manifest from a JSON file.
    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        serde_json::from_str(&content).map_err(|e| CoreError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Writes the manifest as pretty-printed JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json).map_err(|e| CoreError::io(path, e))
    }

    /// Root directory resolved against the manifest file's location.
    pub fn resolved_root(&self, manifest_path: &Path) -> PathBuf {
        let root = Path::new(&self.root);
        if root.is_absolute() {
            root.to_path_buf()
        } else {
            manifest_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(root)
        }
    }

    /// Resolves every entry to absolute paths, given where the manifest
    /// file lives.
    pub fn resolve_entries(&self, manifest_path: &Path) -> Vec<ResolvedEntry> {
        let root = self.resolved_root(manifest_path);
        let join = |rel: &str| {
            let p = Path::new(rel);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                root.join(p)
            }
        };
        self.entries
            .iter()
            .map(|e| ResolvedEntry {
                key: e.image.clone(),
                image: join(&e.image),
                label: e.label.as_deref().map(join),
                domain: e.domain.unwrap_or(self.domain),
            })
            .collect()
    }
}
