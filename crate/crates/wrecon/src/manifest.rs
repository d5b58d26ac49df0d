//! Dataset manifests: JSON listing every phantom with its split.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wrecon_core::data::Split;

use crate::error::{FormatError, Result};
use crate::fsutil;

pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub fine_detail_density: f64,
    pub split_ratio: f64,
    /// Intensity range of the stored images.
    pub value_range: (f32, f32),
    /// Sampling mask, relative to the manifest's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    pub items: Vec<ManifestItem>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        fsutil::write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&fsutil::read(path)?)?;
        if m.version != VERSION {
            return Err(FormatError::Version {
                expected: VERSION,
                found: m.version,
            });
        }
        Ok(m)
    }

    pub fn items_in(&self, split: Split) -> impl Iterator<Item = &ManifestItem> {
        self.items.iter().filter(move |i| i.split == split)
    }
}

/// Resolves `rel` against the directory holding `manifest_path`.
pub fn resolve(manifest_path: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        return rel.to_path_buf();
    }
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(rel)
}
