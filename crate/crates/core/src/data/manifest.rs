use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::codec::{read_file, write_file_atomic};
use super::source::SourceId;
use super::tags::SplitAssignment;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// Dataset description: per-source frame files, the tag file and the split.
///
/// Relative paths resolve against the directory holding the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dataset: String,
    pub sources: BTreeMap<SourceId, String>,
    pub tags: String,
    pub splits: SplitAssignment,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(
        dataset: impl Into<String>,
        sources: BTreeMap<SourceId, String>,
        tags: impl Into<String>,
        splits: SplitAssignment,
    ) -> Self {
        Manifest {
            format_version: MANIFEST_VERSION,
            dataset: dataset.into(),
            sources,
            tags: tags.into(),
            splits,
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut m: Manifest = serde_json::from_slice(&bytes)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::Validation(format!(
                "manifest format version {} unsupported",
                m.format_version
            )));
        }
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_file_atomic(path, text.as_bytes())
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn source_path(&self, source: &SourceId) -> Result<PathBuf> {
        self.sources
            .get(source)
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Config(format!("manifest has no {source} embedding file")))
    }

    pub fn tags_path(&self) -> PathBuf {
        self.resolve(&self.tags)
    }
}
