//! Pixel-level road extraction metrics: IoU, completeness (COM),
//! correctness (COR) and their harmonic mean F1, micro-averaged over pixels.

use std::io::Write;
use std::ops::{Add, AddAssign};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DomainCorpus, RoadMask};
use crate::division::binarize_prediction;
use crate::error::{Error, Result};
use crate::model::Generator;
use crate::nn::ParameterSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub r#fn: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.r#fn + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, r#fn: self.r#fn + o.r#fn, tn: self.tn + o.tn }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou: f64,
    pub com: f64,
    pub cor: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
}

pub fn accumulate_confusion(pred: &RoadMask, gt: &RoadMask, acc: ConfusionCounts) -> Result<ConfusionCounts> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut c = acc;
    for (p, g) in pred.labels().iter().zip(gt.labels()) {
        match (*p, *g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.r#fn += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    // An empty denominator means nothing was there to get wrong.
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(counts: ConfusionCounts) -> MetricReport {
    let ConfusionCounts { tp, fp, r#fn: fneg, .. } = counts;
    let iou = ratio(tp, tp + fp + fneg);
    let com = ratio(tp, tp + fneg);
    let cor = ratio(tp, tp + fp);
    let f1 = if com + cor > 0.0 { 2.0 * com * cor / (com + cor) } else { 0.0 };
    MetricReport { iou, com, cor, f1, counts }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEvaluation {
    pub id: String,
    pub counts: ConfusionCounts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub per_image: Vec<ImageEvaluation>,
}

/// JSON summary written by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub iou: f64,
    pub com: f64,
    pub cor: f64,
    pub f1: f64,
    pub pixels: u64,
    pub images: usize,
}

impl Evaluation {
    pub fn summary(&self) -> EvaluationSummary {
        let r = &self.report;
        EvaluationSummary {
            iou: r.iou,
            com: r.com,
            cor: r.cor,
            f1: r.f1,
            pixels: r.counts.total(),
            images: self.per_image.len(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "id,tp,fp,fn,tn,iou,com,cor,f1").expect("vec write");
        for e in &self.per_image {
            let m = compute_metrics(e.counts);
            let c = e.counts;
            writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
                e.id, c.tp, c.fp, c.r#fn, c.tn, m.iou, m.com, m.cor, m.f1
            )
            .expect("vec write");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Predicts each image, binarizes at 0.5 and micro-averages the counts.
pub fn evaluate_model(generator: &Generator, params: &ParameterSet, corpus: &DomainCorpus) -> Result<Evaluation> {
    generator.check_params(params)?;
    let mut per_image = Vec::with_capacity(corpus.len());
    for i in 0..corpus.len() {
        let rec = corpus.record(i);
        let gt = rec.mask.as_ref().ok_or_else(|| Error::invalid(format!("sample {} has no ground truth", rec.id)))?;
        let pred = generator.generator_forward(params, corpus.input(i))?.remove(0);
        let counts = accumulate_confusion(&binarize_prediction(&pred), gt, ConfusionCounts::default())?;
        per_image.push(ImageEvaluation { id: rec.id.clone(), counts });
    }
    let report = compute_metrics(per_image.iter().map(|e| e.counts).sum());
    Ok(Evaluation { report, per_image })
}
