//! Training objectives, evaluated in 64-bit logit space.
//!
//! Cross-entropy uses `logsumexp(z) - z_y`; the binary domain terms use
//! `softplus`, so saturated predictions never produce non-finite losses.
//! Every function offers sum reduction (plain sum over positions) and mean
//! reduction (sum divided by the number of positions of each grid).

use serde::{Deserialize, Serialize};

use crate::data::RoadMask;
use crate::error::{Error, Result};
use crate::model::ProbabilityMap;
use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

impl Reduction {
    fn apply(self, total: f64, positions: usize) -> f64 {
        match self {
            Reduction::Sum => total,
            Reduction::Mean => total / positions as f64,
        }
    }

    fn scale(self, positions: usize) -> f64 {
        self.apply(1.0, positions)
    }
}

/// Binary domain label. Source and easy carry 1; target and hard carry 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainLabel {
    Source,
    Target,
    Easy,
    Hard,
}

impl DomainLabel {
    pub fn value(self) -> f64 {
        match self {
            DomainLabel::Source | DomainLabel::Easy => 1.0,
            DomainLabel::Target | DomainLabel::Hard => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "default_alpha")]
    pub alpha_adv: f64,
    #[serde(default = "default_beta")]
    pub beta_adv: f64,
}

fn default_alpha() -> f64 {
    0.1
}
fn default_beta() -> f64 {
    0.01
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha_adv: default_alpha(), beta_adv: default_beta() }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_adv", self.alpha_adv), ("beta_adv", self.beta_adv)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy over planar two-class logits (`[background..., road...]`)
/// with gradient w.r.t. those logits.
pub fn segmentation_ce_grad(logits: &[f64], labels: &[u8], reduction: Reduction) -> Result<(f64, Vec<f64>)> {
    let plane = labels.len();
    if logits.len() != 2 * plane || plane == 0 {
        return Err(Error::shape(format!("{} logits do not match {} labels", logits.len(), plane)));
    }
    let scale = reduction.scale(plane);
    let mut total = 0.0;
    let mut grad = vec![0.0; 2 * plane];
    for (i, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::invalid(format!("label {y} outside {{0, 1}}")));
        }
        let (z0, z1) = (logits[i], logits[plane + i]);
        let m = z0.max(z1);
        let lse = m + ((z0 - m).exp() + (z1 - m).exp()).ln();
        total += lse - if y == 1 { z1 } else { z0 };
        let p1 = sigmoid(z1 - z0);
        grad[i] = ((1.0 - p1) - (1 - y) as f64) * scale;
        grad[plane + i] = (p1 - y as f64) * scale;
    }
    Ok((reduction.apply(total, plane), grad))
}

/// `-sum y log p` of a prediction against a road mask.
pub fn segmentation_ce(pred: &ProbabilityMap, label: &RoadMask, reduction: Reduction) -> Result<f64> {
    if (pred.height(), pred.width()) != (label.height(), label.width()) {
        return Err(Error::shape(format!(
            "prediction {}x{} vs label {}x{}",
            pred.height(),
            pred.width(),
            label.height(),
            label.width()
        )));
    }
    let logits: Vec<f64> = pred.logits().iter().map(|v| *v as f64).collect();
    Ok(segmentation_ce_grad(&logits, label.labels(), reduction)?.0)
}

/// Binary cross-entropy of one logit grid against a single domain label,
/// with gradient.
pub fn domain_bce_grad(logits: &[f64], label: DomainLabel, reduction: Reduction) -> Result<(f64, Vec<f64>)> {
    if logits.is_empty() {
        return Err(Error::shape("empty logit grid"));
    }
    let y = label.value();
    let scale = reduction.scale(logits.len());
    let mut total = 0.0;
    let grad = logits
        .iter()
        .map(|&z| {
            // -y log s(z) - (1-y) log(1-s(z)) = softplus(z) - y z
            total += softplus(z) - y * z;
            (sigmoid(z) - y) * scale
        })
        .collect();
    Ok((reduction.apply(total, logits.len()), grad))
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("logit grids of {} and {} positions", a.len(), b.len())));
    }
    Ok(())
}

/// Domain classification loss in general form: each grid is scored against
/// its own label. Returns the loss and the gradients w.r.t. both grids.
pub fn discriminator_bce_grad(
    pred_a: &[f64],
    pred_b: &[f64],
    label_a: DomainLabel,
    label_b: DomainLabel,
    reduction: Reduction,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_pair(pred_a, pred_b)?;
    if label_a.value() == label_b.value() {
        return Err(Error::contract("both inputs of the domain loss carry the same label"));
    }
    let (la, ga) = domain_bce_grad(pred_a, label_a, reduction)?;
    let (lb, gb) = domain_bce_grad(pred_b, label_b, reduction)?;
    Ok((la + lb, ga, gb))
}

pub fn discriminator_bce(
    pred_a: &[f64],
    pred_b: &[f64],
    label_a: DomainLabel,
    label_b: DomainLabel,
    reduction: Reduction,
) -> Result<f64> {
    Ok(discriminator_bce_grad(pred_a, pred_b, label_a, label_b, reduction)?.0)
}

/// `-sum [log s(a) + log(1 - s(b))]`: the general form with `a` labeled 1
/// and `b` labeled 0, written out directly.
pub fn discriminator_bce_collapsed(pred_one: &[f64], pred_zero: &[f64], reduction: Reduction) -> Result<f64> {
    check_pair(pred_one, pred_zero)?;
    let one: f64 = pred_one.iter().map(|&z| softplus(-z)).sum();
    let zero: f64 = pred_zero.iter().map(|&z| softplus(z)).sum();
    Ok(reduction.apply(one, pred_one.len()) + reduction.apply(zero, pred_zero.len()))
}

/// `-sum log s(z)`: target-side outputs scored as if they carried label 1.
pub fn adversarial_loss_grad(pred_target: &[f64], reduction: Reduction) -> Result<(f64, Vec<f64>)> {
    domain_bce_grad(pred_target, DomainLabel::Source, reduction)
}

pub fn adversarial_loss(pred_target: &[f64], reduction: Reduction) -> Result<f64> {
    Ok(adversarial_loss_grad(pred_target, reduction)?.0)
}

/// `seg + weight * adv`.
pub fn generator_objective(seg_loss: f64, adv_loss: f64, weight: f64) -> f64 {
    if weight == 0.0 {
        seg_loss
    } else {
        seg_loss + weight * adv_loss
    }
}

/// Batched cross-entropy on `[N, 2, H, W]` logits; the mean variant averages
/// over every pixel of the batch. Gradient has the logits' shape.
pub fn segmentation_ce_batch(logits: &Tensor, masks: &[&RoadMask], reduction: Reduction) -> Result<(f64, Tensor)> {
    if logits.c() != 2 || logits.n() != masks.len() {
        return Err(Error::shape(format!("logits {:?} vs {} masks", logits.shape(), masks.len())));
    }
    let mut grad = Tensor::zeros(logits.n(), 2, logits.h(), logits.w());
    let mut total = 0.0;
    for (i, m) in masks.iter().enumerate() {
        if (m.height(), m.width()) != (logits.h(), logits.w()) {
            return Err(Error::shape("mask size differs from logits"));
        }
        let z: Vec<f64> = logits.item(i).iter().map(|v| *v as f64).collect();
        let (l, g) = segmentation_ce_grad(&z, m.labels(), Reduction::Sum)?;
        total += l;
        for (d, s) in grad.item_mut(i).iter_mut().zip(&g) {
            *d = *s as f32;
        }
    }
    let pixels = logits.n() * logits.plane();
    let scale = reduction.scale(pixels) as f32;
    grad.scale(scale);
    Ok((reduction.apply(total, pixels), grad))
}

/// Batched single-label domain BCE on a `[N, 1, h, w]` logit grid.
pub fn domain_bce_batch(logits: &Tensor, label: DomainLabel, reduction: Reduction) -> Result<(f64, Tensor)> {
    let z: Vec<f64> = logits.data().iter().map(|v| *v as f64).collect();
    let (l, g) = domain_bce_grad(&z, label, reduction)?;
    let grad = Tensor::from_vec(logits.shape(), g.into_iter().map(|v| v as f32).collect())?;
    Ok((l, grad))
}
