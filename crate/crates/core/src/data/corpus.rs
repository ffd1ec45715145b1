use std::path::Path;

use super::augment::{augment_records, AugmentationConfig};
use super::io::{load_mask, load_rgb, standardize};
use super::manifest::{ChannelStats, DatasetManifest};
use super::types::{DomainTag, RoadMask, SampleRecord};
use crate::audit::{self, Purpose};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Whether masks listed in a manifest are read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelPolicy {
    /// Every entry must carry a mask and it is loaded.
    Required,
    /// Masks are never touched, even when listed.
    Ignore,
}

/// In-memory corpus with standardized network inputs cached per record.
#[derive(Clone, Debug)]
pub struct DomainCorpus {
    pub domain: DomainTag,
    pub stats: ChannelStats,
    records: Vec<SampleRecord>,
    inputs: Vec<Tensor>,
}

impl DomainCorpus {
    pub fn from_records(domain: DomainTag, stats: ChannelStats, records: Vec<SampleRecord>) -> Result<Self> {
        let mut ids = std::collections::HashSet::new();
        for r in &records {
            r.check()?;
            if !ids.insert(r.id.as_str()) {
                return Err(Error::invalid(format!("duplicate sample id {}", r.id)));
            }
            if r.domain != domain {
                return Err(Error::invalid(format!("sample {} is not from the {domain:?} domain", r.id)));
            }
        }
        let inputs = records.iter().map(|r| standardize(&r.tile, &stats)).collect::<Result<Vec<_>>>()?;
        Ok(Self { domain, stats, records, inputs })
    }

    pub fn load(manifest: &DatasetManifest, policy: LabelPolicy) -> Result<Self> {
        let domain = match manifest.entries.first() {
            Some(e) => e.domain,
            None => return Err(Error::invalid("manifest has no entries")),
        };
        let mut records = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let tile = load_rgb(&manifest.resolve(&e.image))?;
            let mask = match (policy, &e.mask) {
                (LabelPolicy::Ignore, _) => None,
                (LabelPolicy::Required, Some(m)) => Some(load_mask(&manifest.resolve(m), e.domain)?),
                (LabelPolicy::Required, None) => {
                    return Err(Error::invalid(format!("sample {} has no mask but labels are required", e.id)))
                }
            };
            records.push(SampleRecord { id: e.id.clone(), tile, mask, domain: e.domain, provenance: e.image.clone() });
        }
        Self::from_records(domain, manifest.stats, records)
    }

    pub fn load_path(path: &Path, policy: LabelPolicy) -> Result<Self> {
        Self::load(&DatasetManifest::load(path)?, policy)
    }

    /// Loads a labeled corpus under the evaluation audit purpose.
    pub fn load_for_evaluation(manifest: &DatasetManifest) -> Result<Self> {
        audit::with_purpose(Purpose::Evaluation, || Self::load(manifest, LabelPolicy::Required))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &SampleRecord {
        &self.records[i]
    }

    pub fn input(&self, i: usize) -> &Tensor {
        &self.inputs[i]
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }

    pub fn mask(&self, i: usize) -> Option<&RoadMask> {
        self.records[i].mask.as_ref()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.records.iter().all(|r| r.mask.is_some())
    }

    pub fn has_any_label(&self) -> bool {
        self.records.iter().any(|r| r.mask.is_some())
    }

    /// Corpus of cropped, road-filtered and dihedrally augmented copies,
    /// standardized with this corpus' statistics.
    pub fn augmented(&self, cfg: &AugmentationConfig, seed: u64) -> Result<Self> {
        let records = augment_records(&self.records, cfg, seed)?;
        if records.is_empty() {
            return Err(Error::invalid("augmentation filtered out every crop"));
        }
        Self::from_records(self.domain, self.stats, records)
    }

    /// Copy of the corpus with every mask dropped.
    pub fn without_labels(&self) -> Self {
        let mut c = self.clone();
        for r in &mut c.records {
            r.mask = None;
        }
        c
    }
}
