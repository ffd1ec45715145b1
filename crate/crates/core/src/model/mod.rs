//! Segmentation generator and domain discriminator.

pub mod checkpoint;
mod config;
mod discriminator;
mod generator;
mod layers;
pub(crate) mod prob;

pub use checkpoint::{Checkpoint, CheckpointMeta, StageKind};
pub use config::{AsppConfig, BackboneConfig, BackbonePreset, DiscriminatorConfig, GeneratorConfig, STAGE_STRIDES};
pub use discriminator::{Discriminator, MIN_INPUT as DISCRIMINATOR_MIN_INPUT};
pub use generator::{fuse_features, FeatureHierarchy, Generator, GeneratorTrace};
pub use prob::ProbabilityMap;
