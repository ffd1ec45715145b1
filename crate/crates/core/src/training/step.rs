//! One optimization step: the generator update against a frozen
//! discriminator, followed by the discriminator update on detached
//! predictions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::OptimizerConfig;
use super::schedule::poly_decay_lr;
use super::state::{derive_seed, TrainState};
use crate::data::{DomainCorpus, RoadMask};
use crate::error::{Error, Result};
use crate::losses::{domain_bce_batch, segmentation_ce_batch, DomainLabel, Reduction};
use crate::model::prob::{softmax_channels, softmax_channels_backward};
use crate::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, StageKind};
use crate::nn::{Gradients, ParameterSet, Tape, Tensor};

/// A stacked batch of standardized inputs, with masks on the supervised side.
#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: Tensor,
    pub masks: Vec<RoadMask>,
}

impl Batch {
    pub fn gather(corpus: &DomainCorpus, indices: &[usize], with_masks: bool) -> Result<Self> {
        let items: Vec<Tensor> = indices.iter().map(|&i| corpus.input(i).clone()).collect();
        let masks = if with_masks {
            indices
                .iter()
                .map(|&i| {
                    corpus
                        .mask(i)
                        .cloned()
                        .ok_or_else(|| Error::invalid(format!("sample {} has no mask", corpus.record(i).id)))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Self { inputs: Tensor::stack(&items)?, masks })
    }
}

/// `batch` indices uniform over `0..n`, with replacement.
pub fn sample_indices(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.gen_range(0..n)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    /// Supervised cross-entropy on the labeled batch.
    pub seg: f64,
    /// Adversarial term on the unlabeled batch (before weighting).
    pub adv: f64,
    /// Discriminator loss; zero for supervised-only steps.
    pub disc: f64,
}

impl StepLosses {
    pub fn generator_loss(&self, weight: f64) -> f64 {
        crate::losses::generator_objective(self.seg, self.adv, weight)
    }
}

/// Both networks and the optimizer settings used to train them.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub optim: OptimizerConfig,
}

fn non_finite(iteration: usize, what: &str, losses: &StepLosses, lr: (f64, f64)) -> Error {
    Error::NonFinite {
        iteration,
        diagnostics: format!(
            "{what}; seg_loss={} adv_loss={} disc_loss={} lr_g={} lr_d={}",
            losses.seg, losses.adv, losses.disc, lr.0, lr.1
        ),
    }
}

impl Trainer {
    pub fn new(generator: GeneratorConfig, discriminator: DiscriminatorConfig, optim: OptimizerConfig) -> Result<Self> {
        optim.validate()?;
        Ok(Self { generator: Generator::new(generator)?, discriminator: Discriminator::new(discriminator)?, optim })
    }

    /// New state with a freshly initialized discriminator, reset optimizers and
    /// the generator taken from `init` (or freshly initialized).
    pub fn fresh_state(
        &self,
        stage: StageKind,
        round: usize,
        seed: u64,
        max_iterations: usize,
        init: Option<ParameterSet>,
    ) -> Result<TrainState> {
        let generator = match init {
            Some(p) => {
                self.generator.check_params(&p)?;
                p
            }
            None => self.generator.init_params(derive_seed(seed, 1)),
        };
        let discriminator = self.discriminator.init_params(derive_seed(seed, 2));
        Ok(TrainState::new(
            stage,
            round,
            seed,
            max_iterations,
            generator,
            discriminator,
            self.optim.generator,
            self.optim.discriminator,
        ))
    }

    fn rates(&self, state: &TrainState) -> Result<(f64, f64)> {
        if state.is_finished() {
            return Err(Error::contract(format!("schedule of {} iterations already completed", state.max_iterations)));
        }
        let p = self.optim.poly_power;
        Ok((
            poly_decay_lr(self.optim.generator.lr, state.iteration, state.max_iterations, p)?,
            poly_decay_lr(self.optim.discriminator.lr, state.iteration, state.max_iterations, p)?,
        ))
    }

    /// Gradient of `weight * BCE(D(probs), label_one)` w.r.t. the logits behind
    /// `probs`, with discriminator parameters treated as constants.
    fn adversarial_grad(
        &self,
        discriminator: &ParameterSet,
        probs: &Tensor,
        label_one: DomainLabel,
        weight: f64,
    ) -> Result<(f64, Tensor)> {
        let mut tape = Tape::new();
        let input = tape.input(probs.clone(), true);
        let out = self.discriminator.forward_tape(discriminator, &mut tape, input)?;
        let (adv, seed) = domain_bce_batch(tape.value(out), label_one, Reduction::Mean)?;
        let dprobs = tape
            .backward(discriminator, vec![(out, seed)], None)
            .into_iter()
            .find(|(id, _)| *id == input)
            .map(|(_, g)| g)
            .expect("input marked requires_grad");
        let mut dlogits = softmax_channels_backward(probs, &dprobs);
        dlogits.scale(weight as f32);
        Ok((adv, dlogits))
    }

    /// Generator update on `a` (supervised) and optionally `b` (adversarial).
    /// Returns the losses and the pre-update probabilities of both batches.
    fn generator_substep(
        &self,
        state: &mut TrainState,
        a: &Batch,
        b: Option<(&Batch, f64, DomainLabel)>,
        lr: (f64, f64),
    ) -> Result<(StepLosses, Tensor, Option<Tensor>)> {
        let mut tape = Tape::new();
        let xa = tape.input(a.inputs.clone(), false);
        let ta = self.generator.forward_tape(&state.generator, &mut tape, xa)?;
        let masks: Vec<&RoadMask> = a.masks.iter().collect();
        let (seg, dla) = segmentation_ce_batch(tape.value(ta.logits), &masks, Reduction::Mean)?;
        let probs_a = softmax_channels(tape.value(ta.logits));
        let mut losses = StepLosses { seg, ..Default::default() };
        let mut seeds = vec![(ta.logits, dla)];
        let mut probs_b = None;
        if let Some((b, weight, label_one)) = b {
            let xb = tape.input(b.inputs.clone(), false);
            let tb = self.generator.forward_tape(&state.generator, &mut tape, xb)?;
            let pb = softmax_channels(tape.value(tb.logits));
            let (adv, dlb) = self.adversarial_grad(&state.discriminator, &pb, label_one, weight)?;
            losses.adv = adv;
            if weight > 0.0 {
                seeds.push((tb.logits, dlb));
            }
            probs_b = Some(pb);
        }
        if !(losses.seg.is_finite() && losses.adv.is_finite()) {
            return Err(non_finite(state.iteration, "generator loss", &losses, lr));
        }
        let mut grads = Gradients::zeros_like(&state.generator);
        tape.backward(&state.generator, seeds, Some(&mut grads));
        if !grads.all_finite() {
            return Err(non_finite(state.iteration, "generator gradient", &losses, lr));
        }
        state.g_opt.step(&mut state.generator, &grads, lr.0);
        Ok((losses, probs_a, probs_b))
    }

    fn discriminator_substep(
        &self,
        state: &mut TrainState,
        probs_a: Tensor,
        probs_b: Tensor,
        labels: (DomainLabel, DomainLabel),
        losses: &mut StepLosses,
        lr: (f64, f64),
    ) -> Result<()> {
        let mut tape = Tape::new();
        let pa = tape.input(probs_a, false);
        let oa = self.discriminator.forward_tape(&state.discriminator, &mut tape, pa)?;
        let pb = tape.input(probs_b, false);
        let ob = self.discriminator.forward_tape(&state.discriminator, &mut tape, pb)?;
        let (la, ga) = domain_bce_batch(tape.value(oa), labels.0, Reduction::Mean)?;
        let (lb, gb) = domain_bce_batch(tape.value(ob), labels.1, Reduction::Mean)?;
        losses.disc = la + lb;
        if !losses.disc.is_finite() {
            return Err(non_finite(state.iteration, "discriminator loss", losses, lr));
        }
        let mut grads = Gradients::zeros_like(&state.discriminator);
        tape.backward(&state.discriminator, vec![(oa, ga), (ob, gb)], Some(&mut grads));
        if !grads.all_finite() {
            return Err(non_finite(state.iteration, "discriminator gradient", losses, lr));
        }
        state.d_opt.step(&mut state.discriminator, &grads, lr.1);
        Ok(())
    }

    /// Generator step on `seg(a) + weight * adv(b)` with the discriminator
    /// frozen, then a discriminator step separating the detached predictions
    /// of `a` (labeled `labels.0`) from those of `b` (labeled `labels.1`).
    pub fn alternate_step(
        &self,
        state: &mut TrainState,
        a: &Batch,
        b: &Batch,
        weight: f64,
        labels: (DomainLabel, DomainLabel),
    ) -> Result<StepLosses> {
        if labels.0.value() == labels.1.value() {
            return Err(Error::contract("alternate_step needs two different domain labels"));
        }
        if labels.0.value() != 1.0 {
            return Err(Error::contract("the supervised side must carry label 1"));
        }
        let lr = self.rates(state)?;
        let (mut losses, probs_a, probs_b) = self.generator_substep(state, a, Some((b, weight, labels.0)), lr)?;
        let probs_b = probs_b.expect("adversarial batch given");
        self.discriminator_substep(state, probs_a, probs_b, labels, &mut losses, lr)?;
        state.iteration += 1;
        Ok(losses)
    }

    /// Generator-only supervised step; the discriminator is not touched.
    pub fn supervised_step(&self, state: &mut TrainState, a: &Batch) -> Result<StepLosses> {
        let lr = self.rates(state)?;
        let (losses, _, _) = self.generator_substep(state, a, None, lr)?;
        state.iteration += 1;
        Ok(losses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DomainTag;

    pub(crate) fn tiny_trainer() -> Trainer {
        let d = DiscriminatorConfig { channel_widths: vec![4, 8, 8, 8, 1], ..Default::default() };
        let optim = OptimizerConfig { batch_size: 2, ..Default::default() };
        Trainer::new(GeneratorConfig::default(), d, optim).unwrap()
    }

    fn batch(seed: u32, masks: bool) -> Batch {
        let n = 2;
        let data = (0..n * 3 * 32 * 32)
            .map(|i| (((i as u32).wrapping_mul(2_654_435_761) ^ seed) % 997) as f32 / 500.0 - 1.0)
            .collect();
        let masks = if masks {
            (0..n)
                .map(|k| {
                    let mut m = RoadMask::zeros(32, 32);
                    for c in 0..32 {
                        m.set(10 + 5 * k, c, true);
                    }
                    m
                })
                .collect()
        } else {
            Vec::new()
        };
        Batch { inputs: Tensor::from_vec([n, 3, 32, 32], data).unwrap(), masks }
    }

    #[test]
    fn substeps_are_isolated() {
        let t = tiny_trainer();
        let mut s = t.fresh_state(StageKind::Inter, 0, 3, 10, None).unwrap();
        let (a, b) = (batch(1, true), batch(2, false));
        let d_before = s.discriminator.clone();
        let g_before = s.generator.clone();
        let lr = t.rates(&s).unwrap();
        let (_, pa, pb) = t.generator_substep(&mut s, &a, Some((&b, 0.1, DomainLabel::Source)), lr).unwrap();
        assert_eq!(s.discriminator, d_before);
        assert_ne!(s.generator, g_before);
        let g_mid = s.generator.clone();
        let mut l = StepLosses::default();
        t.discriminator_substep(&mut s, pa, pb.unwrap(), (DomainLabel::Source, DomainLabel::Target), &mut l, lr)
            .unwrap();
        assert_eq!(s.generator, g_mid);
        assert_ne!(s.discriminator, d_before);
    }

    #[test]
    fn zero_weight_is_pure_segmentation() {
        let t = tiny_trainer();
        let (a, b) = (batch(5, true), batch(6, false));
        let mut s1 = t.fresh_state(StageKind::Inter, 0, 4, 10, None).unwrap();
        let mut s2 = s1.clone();
        let l1 = t.alternate_step(&mut s1, &a, &b, 0.0, (DomainLabel::Source, DomainLabel::Target)).unwrap();
        let l2 = t.supervised_step(&mut s2, &a).unwrap();
        assert_eq!(l1.generator_loss(0.0), l1.seg);
        assert_eq!(l1.seg, l2.seg);
        assert_eq!(s1.generator, s2.generator);
        assert!(l1.disc > 0.0 && l2.disc == 0.0);
    }

    #[test]
    fn label_contracts() {
        let t = tiny_trainer();
        let mut s = t.fresh_state(StageKind::Inter, 0, 4, 10, None).unwrap();
        let (a, b) = (batch(5, true), batch(6, false));
        assert!(t.alternate_step(&mut s, &a, &b, 0.1, (DomainLabel::Easy, DomainLabel::Source)).is_err());
        assert!(t.alternate_step(&mut s, &a, &b, 0.1, (DomainLabel::Target, DomainLabel::Source)).is_err());
        let mut done = t.fresh_state(StageKind::Inter, 0, 4, 0, None).unwrap();
        assert!(t.supervised_step(&mut done, &a).is_err());
    }

    #[test]
    fn non_finite_input_aborts_with_iteration() {
        let t = tiny_trainer();
        let mut s = t.fresh_state(StageKind::Inter, 0, 4, 10, None).unwrap();
        let mut a = batch(5, true);
        a.inputs.data_mut()[7] = f32::NAN;
        match t.supervised_step(&mut s, &a) {
            Err(Error::NonFinite { iteration, diagnostics }) => {
                assert_eq!(iteration, 0);
                assert!(diagnostics.contains("seg_loss"));
            }
            other => panic!("expected a non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn gather_requires_masks_when_asked() {
        use crate::data::{ChannelStats, RgbTile, SampleRecord};
        let rec = SampleRecord {
            id: "x".into(),
            tile: RgbTile::new(16, 16, vec![0.5; 16 * 16 * 3]).unwrap(),
            mask: None,
            domain: DomainTag::Target,
            provenance: String::new(),
        };
        let stats = ChannelStats { mean: [0.5; 3], std: [0.2; 3] };
        let c = DomainCorpus::from_records(DomainTag::Target, stats, vec![rec]).unwrap();
        assert!(Batch::gather(&c, &[0, 0], true).is_err());
        assert_eq!(Batch::gather(&c, &[0, 0], false).unwrap().inputs.shape(), [2, 3, 16, 16]);
    }
}
