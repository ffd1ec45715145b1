//! Resumable trainer state: both networks, optimizer moments, iteration
//! counters and the positions of the two batch-sampler streams.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Checkpoint, GeneratorConfig, StageKind};
use crate::nn::optim::{buffers_from_bytes, buffers_to_bytes, Adam, AdamConfig, Sgd, SgdConfig};
use crate::nn::ParameterSet;

/// SplitMix64 finalizer; decorrelates seeds derived from one run seed.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the sub-task `tag` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub stage: StageKind,
    pub round: usize,
    pub iteration: usize,
    pub max_iterations: usize,
    pub generator: ParameterSet,
    pub discriminator: ParameterSet,
    pub g_opt: Sgd,
    pub d_opt: Adam,
    /// Draws batch indices for the supervised side.
    pub sampler_a: ChaCha8Rng,
    /// Draws batch indices for the adversarial side.
    pub sampler_b: ChaCha8Rng,
    pub best_val_iou: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SamplerPos {
    seed: String,
    stream: u64,
    word_pos: String,
}

impl SamplerPos {
    fn of(rng: &ChaCha8Rng) -> Self {
        Self { seed: hex::encode(rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Checkpoint("corrupt sampler position".into());
        let seed: [u8; 32] = hex::decode(&self.seed).map_err(|_| bad())?.try_into().map_err(|_| bad())?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    stage: StageKind,
    round: usize,
    iteration: usize,
    max_iterations: usize,
    best_val_iou: Option<f64>,
    sgd: SgdConfig,
    adam: AdamConfig,
    adam_steps: u64,
    sampler_a: SamplerPos,
    sampler_b: SamplerPos,
}

const GEN_FILE: &str = "generator.bin";
const DISC_FILE: &str = "discriminator.bin";
const OPT_FILE: &str = "optimizer.bin";
const STATE_FILE: &str = "state.json";

impl TrainState {
    /// Fresh optimizers and sampler streams derived from `seed`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        stage: StageKind,
        round: usize,
        seed: u64,
        max_iterations: usize,
        generator: ParameterSet,
        discriminator: ParameterSet,
        sgd: SgdConfig,
        adam: AdamConfig,
    ) -> Self {
        let sampler = |tag| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 100));
            rng.set_stream(tag);
            rng
        };
        Self {
            stage,
            round,
            iteration: 0,
            max_iterations,
            g_opt: Sgd::new(sgd, &generator),
            d_opt: Adam::new(adam, &discriminator),
            generator,
            discriminator,
            sampler_a: sampler(1),
            sampler_b: sampler(2),
            best_val_iou: None,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.max_iterations
    }

    pub fn checkpoint(&self, config: &GeneratorConfig) -> Checkpoint {
        Checkpoint::new(config.clone(), self.generator.clone(), self.stage, self.round, self.iteration)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        write(GEN_FILE, &self.generator.to_bytes())?;
        write(DISC_FILE, &self.discriminator.to_bytes())?;
        let mut opt = buffers_to_bytes(&self.g_opt.velocity);
        opt.extend(buffers_to_bytes(&self.d_opt.first));
        opt.extend(buffers_to_bytes(&self.d_opt.second));
        write(OPT_FILE, &opt)?;
        let file = StateFile {
            stage: self.stage,
            round: self.round,
            iteration: self.iteration,
            max_iterations: self.max_iterations,
            best_val_iou: self.best_val_iou,
            sgd: self.g_opt.config,
            adam: self.d_opt.config,
            adam_steps: self.d_opt.step_count,
            sampler_a: SamplerPos::of(&self.sampler_a),
            sampler_b: SamplerPos::of(&self.sampler_b),
        };
        write(STATE_FILE, serde_json::to_string_pretty(&file)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        let file: StateFile = serde_json::from_slice(&read(STATE_FILE)?)?;
        let generator = ParameterSet::from_bytes(&read(GEN_FILE)?)?;
        let discriminator = ParameterSet::from_bytes(&read(DISC_FILE)?)?;
        let opt = read(OPT_FILE)?;
        let mut cursor = opt.as_slice();
        let corrupt = || Error::Checkpoint(format!("{}: corrupt optimizer state", dir.display()));
        let velocity = buffers_from_bytes(&mut cursor).ok_or_else(corrupt)?;
        let first = buffers_from_bytes(&mut cursor).ok_or_else(corrupt)?;
        let second = buffers_from_bytes(&mut cursor).ok_or_else(corrupt)?;
        let sizes = |p: &ParameterSet| p.tensors().iter().map(|t| t.data.len()).collect::<Vec<_>>();
        let lens = |b: &[Vec<f32>]| b.iter().map(Vec::len).collect::<Vec<_>>();
        if !cursor.is_empty()
            || lens(&velocity) != sizes(&generator)
            || lens(&first) != sizes(&discriminator)
            || lens(&second) != sizes(&discriminator)
        {
            return Err(corrupt());
        }
        Ok(Self {
            stage: file.stage,
            round: file.round,
            iteration: file.iteration,
            max_iterations: file.max_iterations,
            generator,
            discriminator,
            g_opt: Sgd { config: file.sgd, velocity },
            d_opt: Adam { config: file.adam, step_count: file.adam_steps, first, second },
            sampler_a: file.sampler_a.restore()?,
            sampler_b: file.sampler_b.restore()?,
            best_val_iou: file.best_val_iou,
        })
    }
}
