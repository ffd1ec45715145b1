use crate::nn::params::Init;
use crate::nn::{ConvGeom, ParamId, TensorSpec};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
}

/// Collects tensor specs in declaration order; ids index into the resulting
/// parameter set.
#[derive(Default)]
pub(crate) struct LayoutBuilder {
    pub specs: Vec<TensorSpec>,
}

impl LayoutBuilder {
    pub fn conv(&mut self, name: &str, geom: ConvGeom, gain: f32) -> ConvLayer {
        let weight = ParamId(self.specs.len());
        self.specs.push(TensorSpec {
            name: format!("{name}.weight"),
            shape: geom.weight_shape(),
            init: Init::FanInNormal { fan_in: geom.patch_len(), gain },
        });
        let bias = ParamId(self.specs.len());
        self.specs.push(TensorSpec { name: format!("{name}.bias"), shape: vec![geom.out_channels], init: Init::Zeros });
        ConvLayer { weight, bias, geom }
    }
}
