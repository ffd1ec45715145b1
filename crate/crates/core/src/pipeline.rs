//! End-to-end runs: load corpora, stage-1 alignment, stage-2 self-training,
//! final evaluation, and the artifacts each step leaves under `output_dir`.
//!
//! ```text
//! output_dir/
//!   config.resolved.json
//!   stage1/{ckpt/, state/, losses.csv}
//!   stage2/{run_log.jsonl, round_k/{ckpt/, split.json, losses.csv}, best/ckpt/}
//!   final_eval.json, final_eval.csv
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{DatasetManifest, DomainCorpus, LabelPolicy};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, EvaluationSummary};
use crate::model::Checkpoint;
use crate::training::{derive_seed, inter_domain_stage, self_training_loop, write_loss_csv, Trainer};

/// Seed tags for the independent parts of a run.
pub const AUGMENT_TAG: u64 = 7;
pub const STAGE1_TAG: u64 = 11;
pub const STAGE2_TAG: u64 = 12;

#[derive(Clone, Debug)]
pub struct RunData {
    /// Labeled source corpus, augmented when configured.
    pub source: DomainCorpus,
    /// Unlabeled target training corpus.
    pub target: DomainCorpus,
    /// Labeled target validation corpus.
    pub val: DomainCorpus,
}

impl RunData {
    pub fn load(cfg: &RunConfig, root: &Path) -> Result<Self> {
        let manifest = |p: &str| DatasetManifest::load(&RunConfig::resolve(root, p));
        let source_manifest = manifest(&cfg.data.source_manifest)?;
        let mut source = DomainCorpus::load(&source_manifest, LabelPolicy::Required)?;
        if let Some(aug) = &cfg.data.augmentation {
            source = source.augmented(aug, derive_seed(cfg.seed, AUGMENT_TAG))?;
        }
        let target_manifest = manifest(&cfg.data.target_manifest)?;
        if target_manifest.entries.iter().any(|e| e.mask.is_some()) {
            return Err(Error::Leakage(format!(
                "{} lists target masks; the target training manifest must be unlabeled",
                cfg.data.target_manifest
            )));
        }
        let target = DomainCorpus::load(&target_manifest, LabelPolicy::Ignore)?;
        let val_manifest = manifest(&cfg.data.val_manifest)?;
        if !val_manifest.is_labeled() {
            return Err(Error::invalid(format!("{} must list a mask for every entry", cfg.data.val_manifest)));
        }
        let val = DomainCorpus::load_for_evaluation(&val_manifest)?;
        Ok(Self { source, target, val })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StageSelection {
    Both,
    Inter,
    SelfTrain { from: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_checkpoint: PathBuf,
    pub final_eval: EvaluationSummary,
    /// Stage-2 round whose generator was kept; `None` for stage-1 only runs.
    pub best_round: Option<usize>,
    pub rounds: usize,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

/// Records the failing iteration next to the run outputs before propagating.
fn dump_diagnostics(out: &Path, err: Error) -> Error {
    if let Error::NonFinite { iteration, diagnostics } = &err {
        let v = serde_json::json!({"iteration": iteration, "diagnostics": diagnostics});
        let _ = write_json(&v, &out.join("diagnostics.json"));
    }
    err
}

pub fn run(cfg: &RunConfig, root: &Path, selection: &StageSelection) -> Result<RunSummary> {
    cfg.validate()?;
    let out = RunConfig::resolve(root, &cfg.output_dir);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    std::fs::write(out.join("config.resolved.json"), cfg.to_json() + "\n").map_err(|e| Error::io(&out, e))?;

    let trainer = Trainer::new(cfg.model.generator.clone(), cfg.model.discriminator.clone(), cfg.optim.clone())?;
    let data = RunData::load(cfg, root)?;

    let inter = match selection {
        StageSelection::SelfTrain { from } => {
            Checkpoint::load_for(&RunConfig::resolve(root, &from.to_string_lossy()), trainer.generator.config())?
        }
        _ => {
            let outcome = inter_domain_stage(
                &trainer,
                &data.source,
                &data.target,
                &cfg.stage1,
                derive_seed(cfg.seed, STAGE1_TAG),
            )
            .map_err(|e| dump_diagnostics(&out, e))?;
            let dir = out.join("stage1");
            let ckpt = outcome.checkpoint(&trainer);
            ckpt.save(&dir.join("ckpt"))?;
            outcome.state.save(&dir.join("state"))?;
            write_loss_csv(&outcome.losses, &dir.join("losses.csv"))?;
            ckpt
        }
    };

    let (final_ckpt, final_path, best_round, rounds) = if *selection == StageSelection::Inter {
        (inter, out.join("stage1").join("ckpt"), None, 0)
    } else {
        let dir = out.join("stage2");
        let st = self_training_loop(
            &trainer,
            &data.target,
            &inter,
            &data.val,
            &cfg.stage2,
            derive_seed(cfg.seed, STAGE2_TAG),
            Some(&dir),
        )
        .map_err(|e| dump_diagnostics(&out, e))?;
        let path = dir.join("best").join("ckpt");
        st.best.save(&path)?;
        (st.best, path, Some(st.best_round), st.reports.len())
    };

    let eval = evaluate_model(&trainer.generator, &final_ckpt.params, &data.val)?;
    let summary = eval.summary();
    write_json(&summary, &out.join("final_eval.json"))?;
    eval.write_csv(&out.join("final_eval.csv"))?;
    Ok(RunSummary { final_checkpoint: final_path, final_eval: summary, best_round, rounds })
}
