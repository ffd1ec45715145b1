//! Staged residual backbone, two ASPP heads over C4/C5, pyramid fusion at
//! rate 8 and a 1x1 two-class projection upsampled to input resolution.

use super::config::{GeneratorConfig, STAGE_STRIDES};
use super::layers::{ConvLayer, LayoutBuilder};
use super::prob::ProbabilityMap;
use crate::error::{Error, Result};
use crate::nn::{ConvGeom, ParameterSet, Tape, Tensor, TensorSpec, ValueId};

/// He-style gain for layers followed by a ReLU.
const RELU_GAIN: f32 = 2.0;

#[derive(Clone, Debug)]
struct Stage {
    down: ConvLayer,
    res_a: ConvLayer,
    res_b: ConvLayer,
}

/// Generator architecture. Parameters live in a separate [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    layout: Vec<TensorSpec>,
    stages: Vec<Stage>,
    aspp_c4: Vec<ConvLayer>,
    aspp_c5: Vec<ConvLayer>,
    head: ConvLayer,
}

/// Backbone outputs C1..C5.
#[derive(Clone, Debug)]
pub struct FeatureHierarchy {
    pub stages: [Tensor; 5],
}

/// Tape handles for every intermediate of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorTrace {
    pub input: ValueId,
    pub stages: [ValueId; 5],
    pub c4_star: ValueId,
    pub c5_star: ValueId,
    pub fused: ValueId,
    pub logits: ValueId,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut b = LayoutBuilder::default();
        let widths = cfg.backbone.stage_channels;
        let mut stages = Vec::with_capacity(5);
        let mut prev_c = 3;
        let mut prev_rate = 1;
        for (s, (&c, &rate)) in widths.iter().zip(STAGE_STRIDES.iter()).enumerate() {
            let down_geom = if rate == 2 * prev_rate {
                ConvGeom::new(prev_c, c, 4).stride(2).padding(1)
            } else {
                ConvGeom::new(prev_c, c, 3).padding(1)
            };
            let down = b.conv(&format!("backbone.stage{}.down", s + 1), down_geom, RELU_GAIN);
            let res_a = b.conv(&format!("backbone.stage{}.res_a", s + 1), ConvGeom::new(c, c, 3).padding(1), RELU_GAIN);
            // The second residual conv starts small so each block begins near identity.
            let res_b = b.conv(&format!("backbone.stage{}.res_b", s + 1), ConvGeom::new(c, c, 3).padding(1), 0.5);
            stages.push(Stage { down, res_a, res_b });
            prev_c = c;
            prev_rate = rate;
        }
        let a = cfg.aspp.out_channels;
        let branch_gain = RELU_GAIN / cfg.aspp.dilation_rates.len() as f32;
        let aspp = |b: &mut LayoutBuilder, tag: &str, in_c: usize| -> Vec<ConvLayer> {
            cfg.aspp
                .dilation_rates
                .iter()
                .map(|&d| {
                    b.conv(
                        &format!("aspp.{tag}.rate{d}"),
                        ConvGeom::new(in_c, a, 3).padding(d).dilation(d),
                        branch_gain,
                    )
                })
                .collect()
        };
        let aspp_c4 = aspp(&mut b, "c4", widths[3]);
        let aspp_c5 = aspp(&mut b, "c5", widths[4]);
        let head = b.conv("head.classifier", ConvGeom::new(a, cfg.num_classes, 1), 1.0);
        Ok(Self { cfg, layout: b.specs, stages, aspp_c4, aspp_c5, head })
    }

    pub fn config(&self) -> &GeneratorConfig {
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

    /// Name prefix of the final projection's tensors.
    pub const HEAD: &'static str = "head.classifier";

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c() != 3 {
            return Err(Error::shape(format!("generator expects 3 input channels, got {}", x.c())));
        }
        if x.h() == 0 || x.w() == 0 || !x.h().is_multiple_of(16) || !x.w().is_multiple_of(16) {
            return Err(Error::shape(format!("input {}x{} is not divisible by 16", x.h(), x.w())));
        }
        Ok(())
    }

    fn stage_forward(&self, params: &ParameterSet, tape: &mut Tape, stage: &Stage, x: ValueId) -> Result<ValueId> {
        let d = tape.conv(params, stage.down.weight, stage.down.bias, stage.down.geom, x)?;
        let d = tape.relu(d);
        let r = tape.conv(params, stage.res_a.weight, stage.res_a.bias, stage.res_a.geom, d)?;
        let r = tape.relu(r);
        let r = tape.conv(params, stage.res_b.weight, stage.res_b.bias, stage.res_b.geom, r)?;
        let s = tape.add(d, r)?;
        Ok(tape.relu(s))
    }

    fn aspp_forward(params: &ParameterSet, tape: &mut Tape, branches: &[ConvLayer], x: ValueId) -> Result<ValueId> {
        let mut acc: Option<ValueId> = None;
        for l in branches {
            let y = tape.conv(params, l.weight, l.bias, l.geom, x)?;
            acc = Some(match acc {
                None => y,
                Some(a) => tape.add(a, y)?,
            });
        }
        acc.ok_or_else(|| Error::shape("ASPP without branches"))
    }

    /// Upsamples `c5_star` to the size of `c4_star` and adds.
    fn fuse_on_tape(tape: &mut Tape, c4_star: ValueId, c5_star: ValueId) -> Result<ValueId> {
        let (a, b) = (tape.value(c4_star), tape.value(c5_star));
        if a.c() != b.c() {
            return Err(Error::shape(format!("cannot fuse {} and {} channels", a.c(), b.c())));
        }
        let (h, w) = (a.h(), a.w());
        let up = tape.resize(c5_star, h, w)?;
        tape.add(c4_star, up)
    }

    pub fn forward_tape(&self, params: &ParameterSet, tape: &mut Tape, input: ValueId) -> Result<GeneratorTrace> {
        let x = tape.value(input);
        self.check_input(x)?;
        let (h, w) = (x.h(), x.w());
        let mut cur = input;
        let mut ids = [input; 5];
        for (i, stage) in self.stages.iter().enumerate() {
            cur = self.stage_forward(params, tape, stage, cur)?;
            ids[i] = cur;
        }
        let c4_star = Self::aspp_forward(params, tape, &self.aspp_c4, ids[3])?;
        let c5_star = Self::aspp_forward(params, tape, &self.aspp_c5, ids[4])?;
        let fused = Self::fuse_on_tape(tape, c4_star, c5_star)?;
        let act = tape.relu(fused);
        let low = tape.conv(params, self.head.weight, self.head.bias, self.head.geom, act)?;
        let logits = tape.resize(low, h, w)?;
        Ok(GeneratorTrace { input, stages: ids, c4_star, c5_star, fused, logits })
    }

    pub fn backbone_forward(&self, params: &ParameterSet, x: &Tensor) -> Result<FeatureHierarchy> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let mut cur = tape.input(x.clone(), false);
        let mut out = Vec::with_capacity(5);
        for stage in &self.stages {
            cur = self.stage_forward(params, &mut tape, stage, cur)?;
            out.push(tape.value(cur).clone());
        }
        let stages: [Tensor; 5] = out.try_into().expect("five stages");
        Ok(FeatureHierarchy { stages })
    }

    /// Applies both ASPP heads and fuses: `ASPP(C4) + up2(ASPP(C5))`.
    pub fn fpfm_fuse(&self, params: &ParameterSet, c4: &Tensor, c5: &Tensor) -> Result<Tensor> {
        if c4.h() != 2 * c5.h() || c4.w() != 2 * c5.w() {
            return Err(Error::shape(format!(
                "C5 ({}x{}) must be half the size of C4 ({}x{})",
                c5.h(),
                c5.w(),
                c4.h(),
                c4.w()
            )));
        }
        let mut tape = Tape::new();
        let a = tape.input(c4.clone(), false);
        let b = tape.input(c5.clone(), false);
        let a = Self::aspp_forward(params, &mut tape, &self.aspp_c4, a)?;
        let b = Self::aspp_forward(params, &mut tape, &self.aspp_c5, b)?;
        let f = Self::fuse_on_tape(&mut tape, a, b)?;
        Ok(tape.take(f))
    }

    /// Raw `[N, 2, H, W]` logits.
    pub fn logits(&self, params: &ParameterSet, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let input = tape.input(x.clone(), false);
        let trace = self.forward_tape(params, &mut tape, input)?;
        Ok(tape.take(trace.logits))
    }

    pub fn generator_forward(&self, params: &ParameterSet, x: &Tensor) -> Result<Vec<ProbabilityMap>> {
        ProbabilityMap::batch_from_logits(&self.logits(params, x)?)
    }
}

/// Pyramid fusion of already ASPP-processed features: bilinear 2x upsampling
/// of `c5_star` followed by elementwise addition to `c4_star`.
pub fn fuse_features(c4_star: &Tensor, c5_star: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let a = tape.input(c4_star.clone(), false);
    let b = tape.input(c5_star.clone(), false);
    let f = Generator::fuse_on_tape(&mut tape, a, b)?;
    Ok(tape.take(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{AsppConfig, BackboneConfig};

    fn tiny() -> Generator {
        Generator::new(GeneratorConfig::default()).unwrap()
    }

    fn input(h: usize, w: usize, seed: u32) -> Tensor {
        let data = (0..3 * h * w)
            .map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) % 1000) as f32 / 500.0 - 1.0)
            .collect();
        Tensor::from_vec([1, 3, h, w], data).unwrap()
    }

    #[test]
    fn stage_geometry_for_64() {
        let g = tiny();
        let p = g.init_params(1);
        let f = g.backbone_forward(&p, &input(64, 64, 1)).unwrap();
        let sizes: Vec<(usize, usize, usize)> = f.stages.iter().map(|t| (t.c(), t.h(), t.w())).collect();
        assert_eq!(sizes, vec![(8, 32, 32), (16, 16, 16), (32, 8, 8), (32, 8, 8), (64, 4, 4)]);
    }

    #[test]
    fn indivisible_input_rejected_before_compute() {
        let g = tiny();
        let p = g.init_params(1);
        let err = g.backbone_forward(&p, &input(48, 40, 1)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(g.generator_forward(&p, &input(60, 64, 1)).is_err());
        // 48 is divisible by 16 and therefore legal
        assert!(g.backbone_forward(&p, &input(48, 48, 1)).is_ok());
    }

    #[test]
    fn zero_head_gives_half_everywhere() {
        let g = tiny();
        let mut p = g.init_params(5);
        for suffix in ["weight", "bias"] {
            p.tensor_mut(&format!("{}.{suffix}", Generator::HEAD)).unwrap().data.fill(0.0);
        }
        let maps = g.generator_forward(&p, &input(64, 64, 3)).unwrap();
        assert_eq!((maps[0].height(), maps[0].width()), (64, 64));
        assert!(maps[0].probs().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let g = tiny();
        let p = g.init_params(9);
        let x = input(64, 64, 4);
        assert_eq!(g.logits(&p, &x).unwrap(), g.logits(&p, &x).unwrap());
    }

    #[test]
    fn zero_c5_branch_leaves_c4_star() {
        let g = tiny();
        let mut p = g.init_params(2);
        let f = g.backbone_forward(&p, &input(64, 64, 7)).unwrap();
        let full = g.fpfm_fuse(&p, &f.stages[3], &f.stages[4]).unwrap();
        let names: Vec<String> =
            p.tensors().iter().map(|t| t.name.clone()).filter(|n| n.starts_with("aspp.c5")).collect();
        for n in names {
            p.tensor_mut(&n).unwrap().data.fill(0.0);
        }
        let fused = g.fpfm_fuse(&p, &f.stages[3], &f.stages[4]).unwrap();
        assert_eq!(fused.shape(), [1, 32, 8, 8]);
        let mut tape = Tape::new();
        let c4 = tape.input(f.stages[3].clone(), false);
        let c4s = Generator::aspp_forward(&p, &mut tape, &g.aspp_c4, c4).unwrap();
        assert_eq!(&fused, tape.value(c4s));
        assert_ne!(full, fused);
    }

    /// Brute-force bilinear (half-pixel) upsample-and-add.
    fn oracle_fuse(c4: &Tensor, c5: &Tensor) -> Tensor {
        let (h, w) = (c4.h(), c4.w());
        let (sh, sw) = (c5.h(), c5.w());
        let mut out = c4.clone();
        for c in 0..c4.c() {
            for y in 0..h {
                for x in 0..w {
                    let sy = ((y as f64 + 0.5) * sh as f64 / h as f64 - 0.5).max(0.0);
                    let sx = ((x as f64 + 0.5) * sw as f64 / w as f64 - 0.5).max(0.0);
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(sh - 1), (x0 + 1).min(sw - 1));
                    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                    let at = |yy: usize, xx: usize| c5.item(0)[(c * sh + yy) * sw + xx] as f64;
                    let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
                        + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
                    out.item_mut(0)[(c * h + y) * w + x] += v as f32;
                }
            }
        }
        out
    }

    #[test]
    fn constant_features_fuse_to_their_sum() {
        let a = Tensor::filled([1, 4, 8, 8], 1.25);
        let b = Tensor::filled([1, 4, 4, 4], -0.5);
        let f = fuse_features(&a, &b).unwrap();
        assert!(f.data().iter().all(|v| (*v - 0.75).abs() < 1e-6));
        assert_eq!(f, oracle_fuse(&a, &b));
        let mixed = Tensor::from_vec([1, 4, 4, 4], (0..64).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
        let got = fuse_features(&a, &mixed).unwrap();
        for (x, y) in got.data().iter().zip(oracle_fuse(&a, &mixed).data()) {
            assert!((x - y).abs() < 1e-5);
        }
        assert!(fuse_features(&a, &Tensor::filled([1, 3, 4, 4], 0.0)).is_err());
    }

    #[test]
    fn resnet_preset_builds() {
        let cfg = GeneratorConfig {
            backbone: BackboneConfig::resnet101_like(),
            aspp: AsppConfig { out_channels: 256, ..AsppConfig::default() },
            num_classes: 2,
        };
        let g = Generator::new(cfg).unwrap();
        assert!(g.layout().iter().any(|s| s.shape == vec![2048, 1024, 4, 4]));
    }
}
