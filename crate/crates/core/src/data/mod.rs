//! Tiles, masks, manifests, the crop/filter/eightfold augmentation pipeline and
//! the procedural road-corpus generator.

pub mod augment;
pub mod corpus;
pub mod io;
pub mod manifest;
pub mod synth;
mod types;

pub use augment::{
    augment_eightfold, augment_records, crop_patches, filter_by_road_pixels, AugmentationConfig, CropPatch,
};
pub use corpus::{DomainCorpus, LabelPolicy};
pub use io::{normalize_tile, standardize};
pub use manifest::{ChannelStats, DatasetManifest, ManifestEntry};
pub use synth::{
    generate_synthetic_domain, synthesize_shift, ShiftManifests, StyleGradient, SyntheticDomainSpec, SyntheticShiftSpec,
};
pub use types::{DomainTag, RgbTile, RoadMask, SampleRecord};
