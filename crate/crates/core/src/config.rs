//! Declarative run configuration: one strict JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::AugmentationConfig;
use crate::error::{Error, Result};
use crate::model::{DiscriminatorConfig, GeneratorConfig};
use crate::training::{InterStageConfig, IntraStageConfig, OptimizerConfig};

/// Setting this variable to `1` forces deterministic mode.
pub const DETERMINISTIC_ENV: &str = "ROADDA_DETERMINISTIC";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_source")]
    pub source_manifest: String,
    /// Unlabeled target training images; a manifest listing masks is refused.
    #[serde(default = "default_target")]
    pub target_manifest: String,
    /// Labeled held-out target images, read only for evaluation.
    #[serde(default = "default_val")]
    pub val_manifest: String,
    /// Crop/filter/eightfold applied in memory to the source corpus; `null`
    /// trains on the manifest as is.
    #[serde(default)]
    pub augmentation: Option<AugmentationConfig>,
}

fn default_source() -> String {
    "data/source_train.json".into()
}
fn default_target() -> String {
    "data/target_train.json".into()
}
fn default_val() -> String {
    "data/target_val.json".into()
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source_manifest: default_source(),
            target_manifest: default_target(),
            val_manifest: default_val(),
            augmentation: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub discriminator: DiscriminatorConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optim: OptimizerConfig,
    #[serde(default)]
    pub stage1: InterStageConfig,
    #[serde(default)]
    pub stage2: IntraStageConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default = "default_output")]
    pub output_dir: String,
}

fn default_output() -> String {
    "runs/default".into()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            optim: OptimizerConfig::default(),
            stage1: InterStageConfig::default(),
            stage2: IntraStageConfig::default(),
            seed: 0,
            deterministic: false,
            output_dir: default_output(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.generator.validate()?;
        self.model.discriminator.validate()?;
        self.optim.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        if let Some(a) = &self.data.augmentation {
            a.validate()?;
        }
        Ok(())
    }

    /// Parses and validates; unknown keys and invalid values are config errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies the deterministic-mode environment override.
    pub fn with_env_overrides(mut self) -> Self {
        if std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1") {
            self.deterministic = true;
        }
        self
    }

    pub fn resolve(root: &Path, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            root.join(p)
        }
    }
}
