use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::optim::{AdamConfig, SgdConfig};

/// Optimizers and the shared poly schedule. Defaults: momentum SGD
/// (4e-4, 0.9, 1e-4) for the generator, Adam (1e-4, (0.9, 0.99)) for the
/// discriminator, power 0.9, batch size 4.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub generator: SgdConfig,
    #[serde(default)]
    pub discriminator: AdamConfig,
    #[serde(default = "default_power")]
    pub poly_power: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_power() -> f64 {
    0.9
}
fn default_batch() -> usize {
    4
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            generator: SgdConfig::default(),
            discriminator: AdamConfig::default(),
            poly_power: default_power(),
            batch_size: default_batch(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        let d = &self.discriminator;
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("generator.lr", g.lr)?;
        positive("discriminator.lr", d.lr)?;
        positive("poly_power", self.poly_power)?;
        positive("discriminator.eps", d.eps)?;
        if !(0.0..1.0).contains(&g.momentum) || g.weight_decay.is_nan() || g.weight_decay < 0.0 {
            return Err(Error::Config("generator momentum must lie in [0, 1) and weight decay be >= 0".into()));
        }
        if !(0.0..1.0).contains(&d.betas.0) || !(0.0..1.0).contains(&d.betas.1) {
            return Err(Error::Config("discriminator betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Adversarial alignment of source and target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterStageConfig {
    #[serde(default = "default_alpha")]
    pub alpha_adv: f64,
    #[serde(default = "default_inter_iterations")]
    pub max_iterations: usize,
}

fn default_alpha() -> f64 {
    0.1
}
fn default_inter_iterations() -> usize {
    300
}

impl Default for InterStageConfig {
    fn default() -> Self {
        Self { alpha_adv: default_alpha(), max_iterations: default_inter_iterations() }
    }
}

impl InterStageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_adv.is_finite() && self.alpha_adv >= 0.0) {
            return Err(Error::Config(format!("alpha_adv must be >= 0, got {}", self.alpha_adv)));
        }
        Ok(())
    }
}

/// Self-training rounds inside the target domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntraStageConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_beta")]
    pub beta_adv: f64,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    /// Minimum validation IoU gain, in IoU points, for another round.
    #[serde(default = "default_epsilon")]
    pub saturation_epsilon: f64,
    #[serde(default = "default_round_iterations")]
    pub iterations_per_round: usize,
}

fn default_lambda() -> f64 {
    0.7
}
fn default_beta() -> f64 {
    0.01
}
fn default_rounds() -> usize {
    4
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_round_iterations() -> usize {
    150
}

impl Default for IntraStageConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            beta_adv: default_beta(),
            max_rounds: default_rounds(),
            saturation_epsilon: default_epsilon(),
            iterations_per_round: default_round_iterations(),
        }
    }
}

impl IntraStageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!("lambda must lie in (0, 1), got {}", self.lambda)));
        }
        if !(self.beta_adv.is_finite() && self.beta_adv >= 0.0) {
            return Err(Error::Config(format!("beta_adv must be >= 0, got {}", self.beta_adv)));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        if self.saturation_epsilon.is_nan() {
            return Err(Error::Config("saturation_epsilon must be a number".into()));
        }
        Ok(())
    }
}
