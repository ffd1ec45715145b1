//! Generator checkpoints: a directory holding `params.bin` (tensor
//! container), `model.json` (architecture) and `meta.json` sidecar.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::GeneratorConfig;
use super::generator::Generator;
use crate::error::{Error, Result};
use crate::nn::ParameterSet;

pub const PARAMS_FILE: &str = "params.bin";
pub const MODEL_FILE: &str = "model.json";
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Inter,
    Intra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub init_seed: u64,
    pub stage: StageKind,
    pub round: usize,
    pub iteration: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub config: GeneratorConfig,
    pub params: ParameterSet,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

impl Checkpoint {
    pub fn new(
        config: GeneratorConfig,
        params: ParameterSet,
        stage: StageKind,
        round: usize,
        iteration: usize,
    ) -> Self {
        let meta =
            CheckpointMeta { config_hash: config.hash(), init_seed: params.init_seed(), stage, round, iteration };
        Self { meta, config, params }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join(PARAMS_FILE), &self.params.to_bytes())?;
        write(&dir.join(MODEL_FILE), serde_json::to_string_pretty(&self.config)?.as_bytes())?;
        write(&dir.join(META_FILE), serde_json::to_string_pretty(&self.meta)?.as_bytes())
    }

    /// Loads and cross-checks hash and tensor layout against the stored config.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_slice(&read(&dir.join(META_FILE))?)?;
        let config: GeneratorConfig = serde_json::from_slice(&read(&dir.join(MODEL_FILE))?)?;
        if config.hash() != meta.config_hash {
            return Err(Error::Checkpoint(format!(
                "{}: architecture does not match recorded config hash",
                dir.display()
            )));
        }
        let params = ParameterSet::from_bytes(&read(&dir.join(PARAMS_FILE))?)?;
        Generator::new(config.clone())?
            .check_params(&params)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.display())))?;
        Ok(Self { meta, config, params })
    }

    /// Loads and requires the architecture to equal `expected`.
    pub fn load_for(dir: &Path, expected: &GeneratorConfig) -> Result<Self> {
        let ckpt = Self::load(dir)?;
        if ckpt.meta.config_hash != expected.hash() {
            return Err(Error::Checkpoint(format!(
                "{} was trained with a different architecture (hash {} vs {})",
                dir.display(),
                &ckpt.meta.config_hash[..12],
                &expected.hash()[..12]
            )));
        }
        Ok(ckpt)
    }
}
