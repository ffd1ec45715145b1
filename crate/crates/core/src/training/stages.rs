use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use super::config::{InterStageConfig, IntraStageConfig};
use super::log::{write_loss_csv, LossRow, RunLogEntry};
use super::state::{derive_seed, TrainState};
use super::step::{sample_indices, Batch, StepLosses, Trainer};
use crate::data::{DomainCorpus, DomainTag, SampleRecord};
use crate::division::{generate_pseudo_labels, rank_and_split, DomainSplit};
use crate::error::{Error, Result};
use crate::losses::DomainLabel;
use crate::metrics::{evaluate_model, MetricReport};
use crate::model::{Checkpoint, StageKind};
use crate::nn::ParameterSet;

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub state: TrainState,
    pub losses: Vec<LossRow>,
}

impl StageOutcome {
    pub fn checkpoint(&self, trainer: &Trainer) -> Checkpoint {
        self.state.checkpoint(trainer.generator.config())
    }
}

fn row(iteration: usize, l: StepLosses) -> LossRow {
    LossRow { iteration, seg_loss: l.seg, adv_loss: l.adv, disc_loss: l.disc }
}

/// Runs iterations until `state.iteration == until` (capped at the schedule
/// length). A zero adversarial weight skips the discriminator entirely.
fn run_iterations(
    trainer: &Trainer,
    state: &mut TrainState,
    labeled: &DomainCorpus,
    unlabeled: &DomainCorpus,
    weight: f64,
    labels: (DomainLabel, DomainLabel),
    until: usize,
) -> Result<Vec<LossRow>> {
    let bs = trainer.optim.batch_size;
    let until = until.min(state.max_iterations);
    let mut rows = Vec::with_capacity(until.saturating_sub(state.iteration));
    while state.iteration < until {
        let it = state.iteration;
        let ia = sample_indices(&mut state.sampler_a, labeled.len(), bs);
        let a = Batch::gather(labeled, &ia, true)?;
        let losses = if weight > 0.0 {
            let ib = sample_indices(&mut state.sampler_b, unlabeled.len(), bs);
            let b = Batch::gather(unlabeled, &ib, false)?;
            trainer.alternate_step(state, &a, &b, weight, labels)?
        } else {
            trainer.supervised_step(state, &a)?
        };
        rows.push(row(it, losses));
    }
    Ok(rows)
}

fn check_inter_inputs(source: &DomainCorpus, target: &DomainCorpus) -> Result<()> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("source and target corpora must be nonempty"));
    }
    if !source.is_fully_labeled() {
        return Err(Error::invalid("every source sample needs a ground-truth mask"));
    }
    if target.has_any_label() {
        return Err(Error::Leakage("target corpus carries masks; refusing to train on it".into()));
    }
    Ok(())
}

/// Continues an inter-domain state up to iteration `until`; used for resuming.
pub fn run_inter_iterations(
    trainer: &Trainer,
    state: &mut TrainState,
    source: &DomainCorpus,
    target: &DomainCorpus,
    cfg: &InterStageConfig,
    until: usize,
) -> Result<Vec<LossRow>> {
    check_inter_inputs(source, target)?;
    cfg.validate()?;
    run_iterations(trainer, state, source, target, cfg.alpha_adv, (DomainLabel::Source, DomainLabel::Target), until)
}

/// Adversarial alignment of a labeled source with an unlabeled target.
pub fn inter_domain_stage(
    trainer: &Trainer,
    source: &DomainCorpus,
    target: &DomainCorpus,
    cfg: &InterStageConfig,
    seed: u64,
) -> Result<StageOutcome> {
    check_inter_inputs(source, target)?;
    let mut state = trainer.fresh_state(StageKind::Inter, 0, seed, cfg.max_iterations, None)?;
    let losses = run_inter_iterations(trainer, &mut state, source, target, cfg, cfg.max_iterations)?;
    Ok(StageOutcome { state, losses })
}

fn split_corpora(target: &DomainCorpus, split: &DomainSplit) -> Result<(DomainCorpus, DomainCorpus)> {
    if split.hard.is_empty() {
        return Err(Error::contract("hard split is empty; nothing to align"));
    }
    if split.easy.is_empty() {
        return Err(Error::contract("easy split is empty; nothing to supervise"));
    }
    let mut seen = HashSet::new();
    for id in split.easy_ids().into_iter().chain(split.hard_ids()) {
        if !seen.insert(id) || target.index_of(id).is_none() {
            return Err(Error::invalid(format!("split sample {id} does not match the target corpus")));
        }
    }
    if seen.len() != target.len() {
        return Err(Error::invalid(format!("split covers {} of {} target samples", seen.len(), target.len())));
    }
    let record = |id: &str, mask| {
        let r = target.record(target.index_of(id).expect("checked above"));
        SampleRecord {
            mask,
            provenance: format!("{}|{}", r.provenance, if r.mask.is_some() { "gt" } else { "pseudo" }),
            ..r.clone()
        }
    };
    let easy = split.easy.iter().map(|s| record(&s.sample_id, Some(s.pseudo_mask.clone()))).collect();
    let hard = split.hard.iter().map(|s| record(&s.sample_id, None)).collect();
    Ok((
        DomainCorpus::from_records(DomainTag::Target, target.stats, easy)?,
        DomainCorpus::from_records(DomainTag::Target, target.stats, hard)?,
    ))
}

/// One self-training round: the generator starts from `init`, the
/// discriminator and both optimizers start fresh. The easy part is supervised
/// with its frozen pseudo-labels, the hard part drives the adversarial term.
pub fn intra_domain_round(
    trainer: &Trainer,
    target: &DomainCorpus,
    split: &DomainSplit,
    init: &ParameterSet,
    cfg: &IntraStageConfig,
    seed: u64,
    round: usize,
) -> Result<StageOutcome> {
    cfg.validate()?;
    if target.has_any_label() {
        return Err(Error::Leakage("target corpus carries masks; refusing to train on it".into()));
    }
    let (easy, hard) = split_corpora(target, split)?;
    let round_seed = derive_seed(seed, 1000 + round as u64);
    let mut state =
        trainer.fresh_state(StageKind::Intra, round, round_seed, cfg.iterations_per_round, Some(init.clone()))?;
    let losses = run_iterations(
        trainer,
        &mut state,
        &easy,
        &hard,
        cfg.beta_adv,
        (DomainLabel::Easy, DomainLabel::Hard),
        cfg.iterations_per_round,
    )?;
    Ok(StageOutcome { state, losses })
}

#[derive(Clone, Debug)]
pub struct RoundReport {
    pub round: usize,
    pub split_sizes: (usize, usize),
    pub metrics: MetricReport,
    pub losses: Vec<LossRow>,
    pub wallclock: f64,
}

#[derive(Clone, Debug)]
pub struct SelfTrainingOutcome {
    /// Validation metrics of the stage-1 generator.
    pub round0: MetricReport,
    pub reports: Vec<RoundReport>,
    /// 0 when no round beat the stage-1 generator.
    pub best_round: usize,
    pub best: Checkpoint,
    pub best_metrics: MetricReport,
}

/// Alternates pseudo-labeling, splitting, one intra round and validation,
/// starting from `inter`. Stops once the IoU gain over the best earlier
/// round (stage-1 included) is below `saturation_epsilon` IoU points or
/// after `max_rounds`. Returns the best validated generator.
///
/// With `out_dir`, each round writes `round_k/{ckpt, split.json, losses.csv}`
/// and every evaluation appends to `run_log.jsonl`.
pub fn self_training_loop(
    trainer: &Trainer,
    target: &DomainCorpus,
    inter: &Checkpoint,
    val: &DomainCorpus,
    cfg: &IntraStageConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<SelfTrainingOutcome> {
    cfg.validate()?;
    if val.is_empty() || !val.is_fully_labeled() {
        return Err(Error::invalid("validation corpus must be nonempty and fully labeled"));
    }
    let gcfg = trainer.generator.config();
    if inter.meta.config_hash != gcfg.hash() {
        return Err(Error::Checkpoint("stage-1 checkpoint was trained with a different architecture".into()));
    }
    let started = Instant::now();
    let log_path = out_dir.map(|d| d.join("run_log.jsonl"));
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        if let Some(p) = &log_path {
            if p.exists() {
                std::fs::remove_file(p).map_err(|e| Error::io(p, e))?;
            }
        }
    }
    let round0 = evaluate_model(&trainer.generator, &inter.params, val)?.report;
    if let Some(p) = &log_path {
        RunLogEntry { round: 0, split_sizes: None, metrics: round0, wallclock: started.elapsed().as_secs_f64() }
            .append(p)?;
    }

    let mut best = inter.clone();
    let mut best_metrics = round0;
    let mut best_round = 0;
    let mut current = inter.params.clone();
    let mut reports = Vec::new();
    for round in 1..=cfg.max_rounds {
        let scored = generate_pseudo_labels(target, &trainer.generator, &current)?;
        let split = rank_and_split(scored, cfg.lambda)?;
        let outcome = intra_domain_round(trainer, target, &split, &current, cfg, seed, round)?;
        let metrics = evaluate_model(&trainer.generator, &outcome.state.generator, val)?.report;
        let report = RoundReport {
            round,
            split_sizes: (split.easy.len(), split.hard.len()),
            metrics,
            losses: outcome.losses.clone(),
            wallclock: started.elapsed().as_secs_f64(),
        };
        let ckpt = outcome.checkpoint(trainer);
        if let Some(d) = out_dir {
            let rd = d.join(format!("round_{round}"));
            ckpt.save(&rd.join("ckpt"))?;
            split.write_report(&rd.join("split.json"))?;
            write_loss_csv(&outcome.losses, &rd.join("losses.csv"))?;
        }
        if let Some(p) = &log_path {
            RunLogEntry { round, split_sizes: Some(report.split_sizes), metrics, wallclock: report.wallclock }
                .append(p)?;
        }
        let gain_points = (metrics.iou - best_metrics.iou) * 100.0;
        if metrics.iou > best_metrics.iou {
            best = ckpt;
            best_metrics = metrics;
            best_round = round;
        }
        reports.push(report);
        current = outcome.state.generator;
        if gain_points < cfg.saturation_epsilon {
            break;
        }
    }
    Ok(SelfTrainingOutcome { round0, reports, best_round, best, best_metrics })
}
