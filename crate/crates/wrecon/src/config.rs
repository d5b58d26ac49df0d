//! JSON run configuration for `wrecon train`.
//!
//! Every field is optional; missing ones take the defaults below. Relative
//! paths are resolved against the configuration file's directory.
//!
//! ```json
//! {
//!   "mode": "cascade",
//!   "wcnn": { "levels": 3, "block_depth": 4, "base_channels": 16, "input_channels": 1 },
//!   "cascade": { "n_cascades": 2, "fidelity": { "lambda": "inf", "alpha": 0.0 }, "share_weights": false },
//!   "training": { "epochs": 150, "batch_size": 4, "lr": 0.001, "seed": 0 },
//!   "paths": {
//!     "manifest": "data/manifest.json",
//!     "mask": "data/mask.txt",
//!     "checkpoint": "runs/cascade.wcnn",
//!     "reports": "runs/cascade",
//!     "init_from": "runs/standalone.wcnn"
//!   }
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wrecon_core::{CascadeConfig, WcnnConfig};

use crate::error::{FormatError, Result};
use crate::fsutil;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    #[default]
    Standalone,
    Cascade,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for Training {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 4,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    /// Falls back to the manifest's mask.
    pub mask: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Directory for `loss.csv`; defaults to the checkpoint's directory.
    pub reports: Option<PathBuf>,
    /// Standalone checkpoint that seeds every cascade stage.
    pub init_from: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    pub wcnn: WcnnConfig,
    pub cascade: CascadeConfig,
    pub training: Training,
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_slice(&fsutil::read(path)?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let p = &mut cfg.paths;
        for slot in [&mut p.manifest, &mut p.mask, &mut p.checkpoint, &mut p.reports, &mut p.init_from] {
            if let Some(rel) = slot.as_mut() {
                if rel.is_relative() {
                    *rel = base.join(&*rel);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.wcnn.validate()?;
        if self.mode == RunMode::Cascade {
            self.cascade.validate()?;
        }
        let t = &self.training;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(FormatError::invalid("config", "epochs and batch_size must be >= 1"));
        }
        if !(t.lr > 0.0) || !t.lr.is_finite() {
            return Err(FormatError::invalid("config", format!("lr must be > 0, got {}", t.lr)));
        }
        if self.paths.manifest.is_none() {
            return Err(FormatError::invalid("config", "paths.manifest is required"));
        }
        if self.paths.checkpoint.is_none() {
            return Err(FormatError::invalid("config", "paths.checkpoint is required"));
        }
        if self.mode == RunMode::Standalone && self.paths.init_from.is_some() {
            return Err(FormatError::invalid("config", "paths.init_from applies to cascade mode only"));
        }
        Ok(())
    }
}
