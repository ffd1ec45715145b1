//! JSON corpus manifests.
//!
//! ```json
//! {"root": "...", "stats": {"mean": [..3], "std": [..3]},
//!  "entries": [{"id": "...", "image": "...", "mask": "..." | null, "domain": "source" | "target"}]}
//! ```
//!
//! Relative entry paths resolve against `root`; a relative `root` resolves
//! against the directory holding the manifest file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::load_rgb;
use super::types::DomainTag;
use crate::error::{Error, Result};

/// Per-channel mean and standard deviation of unit-range pixel values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid(format!("channel std must be positive and finite, got {:?}", self.std)));
        }
        Ok(())
    }

    /// Accumulates over unit-range interleaved RGB pixels.
    pub fn from_pixels<'a>(tiles: impl IntoIterator<Item = &'a [f32]>) -> Result<Self> {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = 0usize;
        for px in tiles {
            for p in px.chunks_exact(3) {
                for c in 0..3 {
                    let v = p[c] as f64;
                    sum[c] += v;
                    sq[c] += v * v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::invalid("cannot compute statistics of an empty corpus"));
        }
        let n = count as f64;
        let mean = sum.map(|s| s / n);
        let mut std = [0.0; 3];
        for c in 0..3 {
            std[c] = (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt();
        }
        Ok(Self { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub mask: Option<String>,
    pub domain: DomainTag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub root: String,
    pub stats: ChannelStats,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    /// Builds a manifest whose stats are computed over exactly the listed images.
    pub fn build(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let root: PathBuf = root.into();
        let mut manifest = Self {
            root: root.to_string_lossy().into_owned(),
            stats: ChannelStats { mean: [0.0; 3], std: [1.0; 3] },
            entries,
            base_dir: PathBuf::new(),
        };
        manifest.check()?;
        let tiles =
            manifest.entries.iter().map(|e| load_rgb(&manifest.resolve(&e.image))).collect::<Result<Vec<_>>>()?;
        manifest.stats = ChannelStats::from_pixels(tiles.iter().map(|t| t.pixels()))?;
        Ok(manifest)
    }

    /// Same entries and stats, with different root bookkeeping.
    pub fn with_entries(&self, entries: Vec<ManifestEntry>) -> Self {
        Self { entries, ..self.clone() }
    }

    pub fn root_dir(&self) -> PathBuf {
        let root = Path::new(&self.root);
        if root.is_absolute() {
            root.to_path_buf()
        } else {
            self.base_dir.join(root)
        }
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root_dir().join(p)
        }
    }

    /// Ids are unique and every referenced file exists.
    pub fn check(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::invalid(format!("duplicate sample id {}", e.id)));
            }
            let img = self.resolve(&e.image);
            if !img.is_file() {
                return Err(Error::invalid(format!("missing image {}", img.display())));
            }
            if let Some(m) = &e.mask {
                let mp = self.resolve(m);
                if !mp.is_file() {
                    return Err(Error::invalid(format!("missing mask {}", mp.display())));
                }
            }
        }
        Ok(())
    }

    pub fn is_labeled(&self) -> bool {
        self.entries.iter().all(|e| e.mask.is_some())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Self = serde_json::from_str(&text)?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.stats.validate()?;
        manifest.check()?;
        Ok(manifest)
    }
}
