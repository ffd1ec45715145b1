use super::config::DiscriminatorConfig;
use super::layers::{ConvLayer, LayoutBuilder};
use crate::error::{Error, Result};
use crate::nn::{ConvGeom, ParameterSet, Tape, Tensor, TensorSpec, ValueId};

/// Smallest legal input side: five halvings down to one cell.
pub const MIN_INPUT: usize = 32;

/// Fully-convolutional domain classifier over two-channel probability maps.
/// Emits raw logits on a grid of `ceil(H/32) x ceil(W/32)`.
#[derive(Clone, Debug)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    layout: Vec<TensorSpec>,
    layers: Vec<ConvLayer>,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut b = LayoutBuilder::default();
        let mut prev = 2;
        let last = cfg.channel_widths.len() - 1;
        let layers = cfg
            .channel_widths
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let geom = ConvGeom::new(prev, c, cfg.kernel).stride(cfg.stride).padding(1);
                prev = c;
                let gain = if i == last { 1.0 } else { 2.0 / (1.0 + cfg.leaky_slope * cfg.leaky_slope) };
                b.conv(&format!("disc.conv{}", i + 1), geom, gain)
            })
            .collect();
        Ok(Self { cfg, layout: b.specs, layers })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    pub fn init_params(&self, seed: u64) -> ParameterSet {
        ParameterSet::init(&self.layout, seed)
    }

    pub fn check_params(&self, params: &ParameterSet) -> Result<()> {
        params.check_layout(&self.layout)
    }

    /// Output grid size for an `h x w` input.
    pub fn output_size(h: usize, w: usize) -> Result<(usize, usize)> {
        if h < MIN_INPUT || w < MIN_INPUT {
            return Err(Error::shape(format!("discriminator input {h}x{w} is smaller than {MIN_INPUT}x{MIN_INPUT}")));
        }
        Ok((h.div_ceil(32), w.div_ceil(32)))
    }

    pub fn forward_tape(&self, params: &ParameterSet, tape: &mut Tape, input: ValueId) -> Result<ValueId> {
        let x = tape.value(input);
        if x.c() != 2 {
            return Err(Error::shape(format!("discriminator expects 2 channels, got {}", x.c())));
        }
        Self::output_size(x.h(), x.w())?;
        let last = self.layers.len() - 1;
        let mut cur = input;
        for (i, l) in self.layers.iter().enumerate() {
            let v = tape.value(cur);
            // Odd sides get one extra row/column of zero padding so each layer
            // rounds up instead of down.
            let geom = l.geom.extra(v.h() % 2, v.w() % 2);
            cur = tape.conv(params, l.weight, l.bias, geom, cur)?;
            if i != last {
                cur = tape.leaky_relu(cur, self.cfg.leaky_slope);
            }
        }
        Ok(cur)
    }

    /// `[N, 2, H, W]` probabilities to `[N, 1, ceil(H/32), ceil(W/32)]` logits.
    pub fn discriminator_forward(&self, params: &ParameterSet, probs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.input(probs.clone(), false);
        let y = self.forward_tape(params, &mut tape, x)?;
        Ok(tape.take(y))
    }
}
