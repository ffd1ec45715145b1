//! Two-stage unsupervised domain adaptation for binary road segmentation:
//! output-space adversarial alignment between a labeled source and an
//! unlabeled target domain, followed by confidence-ranked self-training inside
//! the target domain.

pub mod audit;
pub mod config;
pub mod data;
pub mod division;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod training;

pub use error::{Error, Result};
