//! The two-stage training procedure: adversarial inter-domain alignment of a
//! labeled source with an unlabeled target, then rounds of confidence-split
//! self-training inside the target domain until validation IoU saturates.

mod config;
mod log;
mod schedule;
mod stages;
mod state;
mod step;

pub use config::{InterStageConfig, IntraStageConfig, OptimizerConfig};
pub use log::{read_loss_csv, write_loss_csv, LossRow, RunLogEntry};
pub use schedule::poly_decay_lr;
pub use stages::{
    inter_domain_stage, intra_domain_round, run_inter_iterations, self_training_loop, RoundReport, SelfTrainingOutcome,
    StageOutcome,
};
pub use state::{derive_seed, TrainState};
pub use step::{sample_indices, Batch, StepLosses, Trainer};
