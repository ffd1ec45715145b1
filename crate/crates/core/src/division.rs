//! Confidence-ranked split of the target corpus into an easy, pseudo-labeled
//! part and a hard, unlabeled part.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DomainCorpus, RoadMask};
use crate::error::{Error, Result};
use crate::model::{Generator, ProbabilityMap};
use crate::nn::ParameterSet;

/// Road where the road probability is strictly above one half.
pub fn binarize_prediction(pred: &ProbabilityMap) -> RoadMask {
    let labels = pred.road_probs().iter().map(|p| u8::from(*p > 0.5)).collect();
    RoadMask::new(pred.height(), pred.width(), labels).expect("binary labels")
}

/// Mean road probability over the pixels of `mask`; 0 for an empty mask.
pub fn road_confidence_score(pred: &ProbabilityMap, mask: &RoadMask) -> Result<f64> {
    if (pred.height(), pred.width()) != (mask.height(), mask.width()) {
        return Err(Error::shape("prediction and mask sizes differ"));
    }
    let (mut sum, mut count) = (0.0f64, 0usize);
    for (p, m) in pred.road_probs().iter().zip(mask.labels()) {
        if *m == 1 {
            sum += *p as f64;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub sample_id: String,
    pub pseudo_mask: RoadMask,
    pub score: f64,
    pub road_pixel_count: usize,
}

impl ScoredSample {
    pub fn from_prediction(sample_id: impl Into<String>, pred: &ProbabilityMap) -> Self {
        let pseudo_mask = binarize_prediction(pred);
        let score = road_confidence_score(pred, &pseudo_mask).expect("same size");
        let road_pixel_count = pseudo_mask.road_pixels();
        Self { sample_id: sample_id.into(), pseudo_mask, score, road_pixel_count }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSplit {
    pub lambda: f64,
    /// Highest scores first, each with its frozen pseudo-label.
    pub easy: Vec<ScoredSample>,
    pub hard: Vec<ScoredSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub id: String,
    pub score: f64,
}

/// Serialized form of a split: `{lambda, easy: [{id, score}], hard: [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitReport {
    pub lambda: f64,
    pub easy: Vec<SplitEntry>,
    pub hard: Vec<SplitEntry>,
}

impl DomainSplit {
    pub fn easy_ids(&self) -> Vec<&str> {
        self.easy.iter().map(|s| s.sample_id.as_str()).collect()
    }

    pub fn hard_ids(&self) -> Vec<&str> {
        self.hard.iter().map(|s| s.sample_id.as_str()).collect()
    }

    pub fn report(&self) -> SplitReport {
        let entries =
            |v: &[ScoredSample]| v.iter().map(|s| SplitEntry { id: s.sample_id.clone(), score: s.score }).collect();
        SplitReport { lambda: self.lambda, easy: entries(&self.easy), hard: entries(&self.hard) }
    }

    pub fn write_report(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.report())?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Number of easy samples for a corpus of `n`: `floor(lambda * n)`.
pub fn easy_count(lambda: f64, n: usize) -> Result<usize> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::invalid(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    if n < 2 {
        return Err(Error::invalid(format!("cannot split a corpus of {n} samples")));
    }
    // Guard against 0.7 * 10 = 6.9999999 style representation error.
    let exact = lambda * n as f64;
    let rounded = exact.round();
    Ok(if (exact - rounded).abs() < 1e-9 { rounded as usize } else { exact.floor() as usize })
}

/// Sorts by score descending, then id ascending, and cuts at `floor(lambda N)`.
pub fn rank_and_split(mut scored: Vec<ScoredSample>, lambda: f64) -> Result<DomainSplit> {
    let k = easy_count(lambda, scored.len())?;
    if scored.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::invalid("non-finite confidence score"));
    }
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.sample_id.cmp(&b.sample_id)));
    let hard = scored.split_off(k);
    Ok(DomainSplit { lambda, easy: scored, hard })
}

/// Predicts, binarizes and scores every sample of `corpus`. Inference only.
pub fn generate_pseudo_labels(
    corpus: &DomainCorpus,
    generator: &Generator,
    params: &ParameterSet,
) -> Result<Vec<ScoredSample>> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot pseudo-label an empty corpus"));
    }
    generator.check_params(params)?;
    (0..corpus.len())
        .map(|i| {
            let pred = generator.generator_forward(params, corpus.input(i))?.remove(0);
            Ok(ScoredSample::from_prediction(corpus.record(i).id.clone(), &pred))
        })
        .collect()
}
