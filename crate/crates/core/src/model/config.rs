use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Cumulative downsampling of the five backbone stages. The fourth stage keeps
/// stride 1 so C4 stays at rate 8.
pub const STAGE_STRIDES: [usize; 5] = [2, 4, 8, 8, 16];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackbonePreset {
    Tiny,
    Resnet101Like,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub preset: BackbonePreset,
    #[serde(default = "default_strides")]
    pub stage_strides: [usize; 5],
    pub stage_channels: [usize; 5],
}

fn default_strides() -> [usize; 5] {
    STAGE_STRIDES
}

impl BackboneConfig {
    pub fn tiny() -> Self {
        Self { preset: BackbonePreset::Tiny, stage_strides: STAGE_STRIDES, stage_channels: [8, 16, 32, 32, 64] }
    }

    /// Stage widths of ResNet-101 (stem and the four residual groups).
    pub fn resnet101_like() -> Self {
        Self {
            preset: BackbonePreset::Resnet101Like,
            stage_strides: STAGE_STRIDES,
            stage_channels: [64, 256, 512, 1024, 2048],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_strides != STAGE_STRIDES {
            return Err(Error::Config(format!(
                "stage_strides must be {STAGE_STRIDES:?}, got {:?}",
                self.stage_strides
            )));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::Config("stage channel widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsppConfig {
    #[serde(default = "default_dilations")]
    pub dilation_rates: Vec<usize>,
    pub out_channels: usize,
}

fn default_dilations() -> Vec<usize> {
    vec![6, 12, 18, 24]
}

impl Default for AsppConfig {
    fn default() -> Self {
        Self { dilation_rates: default_dilations(), out_channels: 32 }
    }
}

impl AsppConfig {
    pub fn validate(&self) -> Result<()> {
        let mut rates = self.dilation_rates.clone();
        rates.sort_unstable();
        rates.dedup();
        if rates.len() != self.dilation_rates.len() || rates.len() < 2 || rates[0] == 0 {
            return Err(Error::Config(format!(
                "ASPP needs at least two distinct positive dilation rates, got {:?}",
                self.dilation_rates
            )));
        }
        if self.out_channels == 0 {
            return Err(Error::Config("ASPP out_channels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub backbone: BackboneConfig,
    pub aspp: AsppConfig,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
}

fn default_classes() -> usize {
    2
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { backbone: BackboneConfig::tiny(), aspp: AsppConfig::default(), num_classes: 2 }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.aspp.validate()?;
        if self.num_classes != 2 {
            return Err(Error::Config(format!("num_classes must be 2, got {}", self.num_classes)));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form; changes with any architecture field.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_widths")]
    pub channel_widths: Vec<usize>,
    #[serde(default = "default_slope")]
    pub leaky_slope: f32,
}

fn default_layers() -> usize {
    5
}
fn default_kernel() -> usize {
    4
}
fn default_stride() -> usize {
    2
}
fn default_widths() -> Vec<usize> {
    vec![64, 128, 256, 512, 1]
}
fn default_slope() -> f32 {
    0.2
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            num_layers: default_layers(),
            kernel: default_kernel(),
            stride: default_stride(),
            channel_widths: default_widths(),
            leaky_slope: default_slope(),
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers != 5 || self.kernel != 4 || self.stride != 2 {
            return Err(Error::Config("discriminator must have five 4x4 stride-2 layers".into()));
        }
        if self.channel_widths.len() != self.num_layers {
            return Err(Error::Config(format!(
                "expected {} channel widths, got {}",
                self.num_layers,
                self.channel_widths.len()
            )));
        }
        if self.channel_widths.last() != Some(&1) || self.channel_widths.contains(&0) {
            return Err(Error::Config("discriminator widths must be positive and end with 1".into()));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config("leaky_slope must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_architecture_fields() {
        let a = GeneratorConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.aspp.out_channels += 1;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.backbone.stage_channels[4] = 65;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn validation() {
        GeneratorConfig::default().validate().unwrap();
        BackboneConfig::resnet101_like().validate().unwrap();
        let mut g = GeneratorConfig::default();
        g.backbone.stage_strides = [2, 4, 8, 16, 32];
        assert!(g.validate().is_err());
        let mut g = GeneratorConfig::default();
        g.aspp.dilation_rates = vec![6, 6];
        assert!(g.validate().is_err());
        let g = GeneratorConfig { num_classes: 3, ..Default::default() };
        assert!(g.validate().is_err());
        let mut d = DiscriminatorConfig::default();
        d.channel_widths[4] = 2;
        assert!(d.validate().is_err());
        DiscriminatorConfig::default().validate().unwrap();
    }
}
