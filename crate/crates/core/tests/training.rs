use std::path::Path;

use roadda::data::{
    generate_synthetic_domain, DomainCorpus, DomainTag, LabelPolicy, SyntheticDomainSpec, SyntheticShiftSpec,
};
use roadda::division::{easy_count, generate_pseudo_labels, rank_and_split};
use roadda::metrics::evaluate_model;
use roadda::model::{DiscriminatorConfig, GeneratorConfig};
use roadda::nn::optim::SgdConfig;
use roadda::training::{
    inter_domain_stage, intra_domain_round, run_inter_iterations, self_training_loop, InterStageConfig,
    IntraStageConfig, OptimizerConfig, TrainState, Trainer,
};

struct Corpora {
    source: DomainCorpus,
    target: DomainCorpus,
    val: DomainCorpus,
    _dir: tempfile::TempDir,
}

fn domain(spec: &SyntheticDomainSpec, n: usize, dir: &Path, tag: DomainTag, policy: LabelPolicy) -> DomainCorpus {
    let spec = SyntheticDomainSpec { num_images: n, image_size: 32, ..spec.clone() };
    let manifest = generate_synthetic_domain(&spec, dir, tag).unwrap();
    match policy {
        LabelPolicy::Ignore => DomainCorpus::load(&manifest, policy).unwrap(),
        LabelPolicy::Required => DomainCorpus::load_for_evaluation(&manifest).unwrap(),
    }
}

fn corpora() -> Corpora {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk-shift.json");
    let shift = SyntheticShiftSpec::load(&path).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let val_spec = SyntheticDomainSpec { seed: shift.target.seed + 1, ..shift.target.clone() };
    Corpora {
        source: domain(&shift.source, 8, &dir.path().join("s"), DomainTag::Source, LabelPolicy::Required),
        target: domain(&shift.target, 10, &dir.path().join("t"), DomainTag::Target, LabelPolicy::Ignore),
        val: domain(&val_spec, 4, &dir.path().join("v"), DomainTag::Target, LabelPolicy::Required),
        _dir: dir,
    }
}

fn trainer() -> Trainer {
    let g = serde_json::from_str::<GeneratorConfig>(
        r#"{"backbone": {"preset": "tiny", "stage_channels": [4, 8, 8, 8, 16]}, "aspp": {"out_channels": 8}}"#,
    )
    .unwrap();
    let d = DiscriminatorConfig { channel_widths: vec![4, 8, 8, 8, 1], ..Default::default() };
    let optim = OptimizerConfig {
        generator: SgdConfig { lr: 0.01, ..Default::default() },
        batch_size: 2,
        ..Default::default()
    };
    Trainer::new(g, d, optim).unwrap()
}

#[test]
fn zero_iterations_leave_the_initialization() {
    let c = corpora();
    let t = trainer();
    let cfg = InterStageConfig { max_iterations: 0, ..Default::default() };
    let out = inter_domain_stage(&t, &c.source, &c.target, &cfg, 9).unwrap();
    let fresh = t.fresh_state(roadda::model::StageKind::Inter, 0, 9, 0, None).unwrap();
    assert!(out.losses.is_empty());
    assert_eq!(out.state.generator, fresh.generator);
}

#[test]
fn resuming_from_disk_matches_an_uninterrupted_run() {
    let c = corpora();
    let t = trainer();
    let cfg = InterStageConfig { max_iterations: 6, ..Default::default() };
    let straight = inter_domain_stage(&t, &c.source, &c.target, &cfg, 4).unwrap();

    let mut state = t.fresh_state(roadda::model::StageKind::Inter, 0, 4, 6, None).unwrap();
    let mut rows = run_inter_iterations(&t, &mut state, &c.source, &c.target, &cfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    state.save(dir.path()).unwrap();
    let mut resumed = TrainState::load(dir.path()).unwrap();
    assert_eq!(resumed, state);
    rows.extend(run_inter_iterations(&t, &mut resumed, &c.source, &c.target, &cfg, 6).unwrap());

    assert_eq!(resumed.generator, straight.state.generator);
    assert_eq!(resumed.discriminator, straight.state.discriminator);
    assert_eq!(rows, straight.losses);
}

#[test]
fn segmentation_loss_falls_during_stage_one() {
    let c = corpora();
    let t = trainer();
    let cfg = InterStageConfig { max_iterations: 60, ..Default::default() };
    let out = inter_domain_stage(&t, &c.source, &c.target, &cfg, 1).unwrap();
    let mean = |rows: &[roadda::training::LossRow]| rows.iter().map(|r| r.seg_loss).sum::<f64>() / rows.len() as f64;
    let (head, tail) = (mean(&out.losses[..10]), mean(&out.losses[50..]));
    assert!(tail < head, "seg loss {head} -> {tail}");
    assert!(out.losses.iter().all(|r| r.adv_loss.is_finite() && r.disc_loss.is_finite()));
}

#[test]
fn intra_round_uses_the_split_and_starts_a_fresh_discriminator() {
    let c = corpora();
    let t = trainer();
    let init = t.generator.init_params(2);
    let split = rank_and_split(generate_pseudo_labels(&c.target, &t.generator, &init).unwrap(), 0.7).unwrap();
    assert_eq!(split.easy.len(), easy_count(0.7, c.target.len()).unwrap());
    let cfg = IntraStageConfig { iterations_per_round: 2, ..Default::default() };
    let a = intra_domain_round(&t, &c.target, &split, &init, &cfg, 5, 1).unwrap();
    let b = intra_domain_round(&t, &c.target, &split, &init, &cfg, 5, 1).unwrap();
    let other = intra_domain_round(&t, &c.target, &split, &init, &cfg, 5, 2).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.losses.len(), 2);
    assert_ne!(a.state.discriminator, other.state.discriminator);
}

#[test]
fn labeled_target_is_refused_for_training() {
    let c = corpora();
    let t = trainer();
    let err = inter_domain_stage(&t, &c.source, &c.val, &InterStageConfig::default(), 0).unwrap_err();
    assert!(matches!(err, roadda::Error::Leakage(_)), "{err}");
}

fn stage_one(c: &Corpora, t: &Trainer) -> roadda::model::Checkpoint {
    let cfg = InterStageConfig { max_iterations: 8, ..Default::default() };
    inter_domain_stage(t, &c.source, &c.target, &cfg, 3).unwrap().checkpoint(t)
}

#[test]
fn rounds_stop_at_max_rounds_and_keep_the_best() {
    let c = corpora();
    let t = trainer();
    let inter = stage_one(&c, &t);
    let cfg = IntraStageConfig {
        max_rounds: 3,
        saturation_epsilon: f64::NEG_INFINITY,
        iterations_per_round: 2,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = self_training_loop(&t, &c.target, &inter, &c.val, &cfg, 6, Some(dir.path())).unwrap();
    assert_eq!(out.reports.len(), 3);
    let best = out.reports.iter().map(|r| r.metrics.iou).fold(out.round0.iou, f64::max);
    assert_eq!(out.best_metrics.iou, best);
    assert!(out.best_metrics.iou >= out.round0.iou);
    assert_eq!(evaluate_model(&t.generator, &out.best.params, &c.val).unwrap().report.iou, best);
    let log = std::fs::read_to_string(dir.path().join("run_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    for k in 1..=3 {
        assert!(dir.path().join(format!("round_{k}/split.json")).exists());
    }
}

#[test]
fn infinite_epsilon_runs_a_single_round() {
    let c = corpora();
    let t = trainer();
    let inter = stage_one(&c, &t);
    let cfg = IntraStageConfig {
        max_rounds: 4,
        saturation_epsilon: f64::INFINITY,
        iterations_per_round: 2,
        ..Default::default()
    };
    let out = self_training_loop(&t, &c.target, &inter, &c.val, &cfg, 6, None).unwrap();
    assert_eq!(out.reports.len(), 1);
    assert_eq!(out.reports[0].split_sizes, (7, 3));
}

#[test]
fn mismatched_stage_one_checkpoint_is_rejected() {
    let c = corpora();
    let t = trainer();
    let mut inter = stage_one(&c, &t);
    inter.meta.config_hash = "0".repeat(64);
    assert!(self_training_loop(&t, &c.target, &inter, &c.val, &IntraStageConfig::default(), 0, None).is_err());
}
