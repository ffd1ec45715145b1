//! Ablation runner: the source-only baseline, stage-1 alone, one intra round
//! (IA), self-training without the adversarial term (ST) and the full method,
//! all from one seed on shared corpora.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::metrics::evaluate_model;
use crate::pipeline::{RunData, STAGE1_TAG, STAGE2_TAG};
use crate::training::{
    derive_seed, inter_domain_stage, self_training_loop, InterStageConfig, IntraStageConfig, Trainer,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationScores {
    pub seed: u64,
    /// Validation IoU of stage 1 trained without the adversarial term.
    pub source_only: f64,
    pub inter_only: f64,
    /// First intra round of the full method.
    pub ia_only: f64,
    /// Best round of self-training with the adversarial weight set to zero.
    pub st_only: f64,
    /// Best round of the full method (stage-1 model included).
    pub full: f64,
    pub full_rounds: Vec<f64>,
    pub st_rounds: Vec<f64>,
    pub full_best_round: usize,
}

pub fn run_ablation(cfg: &RunConfig, data: &RunData, seed: u64) -> Result<AblationScores> {
    let trainer = Trainer::new(cfg.model.generator.clone(), cfg.model.discriminator.clone(), cfg.optim.clone())?;
    let s1 = derive_seed(seed, STAGE1_TAG);
    let s2 = derive_seed(seed, STAGE2_TAG);
    let iou = |params| -> Result<f64> { Ok(evaluate_model(&trainer.generator, params, &data.val)?.report.iou) };

    let baseline_cfg = InterStageConfig { alpha_adv: 0.0, ..cfg.stage1.clone() };
    let baseline = inter_domain_stage(&trainer, &data.source, &data.target, &baseline_cfg, s1)?;
    let source_only = iou(&baseline.state.generator)?;

    let inter = inter_domain_stage(&trainer, &data.source, &data.target, &cfg.stage1, s1)?;
    let inter_ckpt = inter.checkpoint(&trainer);

    let full = self_training_loop(&trainer, &data.target, &inter_ckpt, &data.val, &cfg.stage2, s2, None)?;
    let st_cfg = IntraStageConfig { beta_adv: 0.0, ..cfg.stage2.clone() };
    let st = self_training_loop(&trainer, &data.target, &inter_ckpt, &data.val, &st_cfg, s2, None)?;

    let rounds = |o: &crate::training::SelfTrainingOutcome| o.reports.iter().map(|r| r.metrics.iou).collect::<Vec<_>>();
    Ok(AblationScores {
        seed,
        source_only,
        inter_only: full.round0.iou,
        ia_only: full.reports[0].metrics.iou,
        st_only: st.best_metrics.iou,
        full: full.best_metrics.iou,
        full_rounds: rounds(&full),
        st_rounds: rounds(&st),
        full_best_round: full.best_round,
    })
}
