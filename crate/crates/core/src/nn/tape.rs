//! Reverse-mode tape over the layer kernels.
//!
//! Every value on the tape is produced by exactly one node; `backward` walks the
//! nodes in reverse, so values must be recorded in topological order, which the
//! builder methods guarantee.

use super::ops::{self, ConvGeom, Resize};
use super::params::{Gradients, ParamId, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Clone, Debug)]
enum Node {
    Input { requires_grad: bool },
    Conv { x: ValueId, weight: ParamId, bias: ParamId, geom: ConvGeom },
    LeakyRelu { x: ValueId, slope: f32 },
    Add { a: ValueId, b: ValueId },
    Resize { x: ValueId, resize: Resize },
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, node: Node) -> ValueId {
        self.values.push(value);
        self.nodes.push(node);
        ValueId(self.values.len() - 1)
    }

    pub fn input(&mut self, x: Tensor, requires_grad: bool) -> ValueId {
        self.push(x, Node::Input { requires_grad })
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn take(mut self, id: ValueId) -> Tensor {
        std::mem::replace(&mut self.values[id.0], Tensor::zeros(0, 0, 0, 0))
    }

    pub fn conv(
        &mut self,
        params: &ParameterSet,
        weight: ParamId,
        bias: ParamId,
        geom: ConvGeom,
        x: ValueId,
    ) -> Result<ValueId> {
        let y = ops::conv2d_forward(&self.values[x.0], params.get(weight), params.get(bias), &geom)?;
        Ok(self.push(y, Node::Conv { x, weight, bias, geom }))
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        self.leaky_relu(x, 0.0)
    }

    pub fn leaky_relu(&mut self, x: ValueId, slope: f32) -> ValueId {
        let y = ops::leaky_relu_forward(&self.values[x.0], slope);
        self.push(y, Node::LeakyRelu { x, slope })
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!("cannot add {:?} and {:?}", ta.shape(), tb.shape())));
        }
        let mut y = ta.clone();
        y.add_assign(tb);
        Ok(self.push(y, Node::Add { a, b }))
    }

    pub fn resize(&mut self, x: ValueId, out_h: usize, out_w: usize) -> Result<ValueId> {
        let t = &self.values[x.0];
        let resize = Resize::new(t.h(), t.w(), out_h, out_w)?;
        let y = resize.forward(t);
        Ok(self.push(y, Node::Resize { x, resize }))
    }

    /// Propagates `seeds` (gradients of a scalar objective w.r.t. recorded
    /// values) back through the tape. Parameter gradients are accumulated into
    /// `grads` when given; otherwise parameters are treated as constants.
    /// Returns the gradient of every input value that was marked `requires_grad`.
    pub fn backward(
        &self,
        params: &ParameterSet,
        seeds: Vec<(ValueId, Tensor)>,
        mut grads: Option<&mut Gradients>,
    ) -> Vec<(ValueId, Tensor)> {
        let want_params = grads.is_some();
        let mut reaches = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            reaches[i] = match node {
                Node::Input { requires_grad } => *requires_grad,
                Node::Conv { x, .. } => want_params || reaches[x.0],
                Node::LeakyRelu { x, .. } | Node::Resize { x, .. } => reaches[x.0],
                Node::Add { a, b } => reaches[a.0] || reaches[b.0],
            };
        }

        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            accumulate(&mut adj[id.0], g);
        }
        let mut inputs = Vec::new();
        for i in (0..self.nodes.len()).rev() {
            let Some(dy) = adj[i].take() else { continue };
            match &self.nodes[i] {
                Node::Input { requires_grad } => {
                    if *requires_grad {
                        inputs.push((ValueId(i), dy));
                    }
                }
                Node::Conv { x, weight, bias, geom } => {
                    let pg = grads.as_deref_mut().map(|g| g.pair_mut(*weight, *bias));
                    let dx = ops::conv2d_backward(&self.values[x.0], params.get(*weight), geom, &dy, pg, reaches[x.0]);
                    if let Some(dx) = dx {
                        accumulate(&mut adj[x.0], dx);
                    }
                }
                Node::LeakyRelu { x, slope } => {
                    if reaches[x.0] {
                        // The output sign equals the input sign, so the input is
                        // not needed separately.
                        let dx = ops::leaky_relu_backward(&self.values[i], &dy, *slope);
                        accumulate(&mut adj[x.0], dx);
                    }
                }
                Node::Add { a, b } => {
                    if reaches[a.0] && reaches[b.0] {
                        accumulate(&mut adj[a.0], dy.clone());
                        accumulate(&mut adj[b.0], dy);
                    } else if reaches[a.0] {
                        accumulate(&mut adj[a.0], dy);
                    } else if reaches[b.0] {
                        accumulate(&mut adj[b.0], dy);
                    }
                }
                Node::Resize { x, resize } => {
                    if reaches[x.0] {
                        accumulate(&mut adj[x.0], resize.backward(&dy));
                    }
                }
            }
        }
        inputs.reverse();
        inputs
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{Init, TensorSpec};

    #[test]
    fn small_graph_gradient_matches_finite_differences() {
        let geom = ConvGeom::new(2, 2, 3).padding(1);
        let specs = vec![
            TensorSpec {
                name: "w".into(),
                shape: geom.weight_shape(),
                init: Init::FanInNormal { fan_in: 18, gain: 2.0 },
            },
            TensorSpec { name: "b".into(), shape: vec![2], init: Init::FanInNormal { fan_in: 1, gain: 0.1 } },
        ];
        let params = ParameterSet::init(&specs, 3);
        let (w, b) = (params.id_of("w").unwrap(), params.id_of("b").unwrap());
        let x0 = Tensor::from_vec([1, 2, 4, 4], (0..32).map(|i| ((i * 7 % 11) as f32 - 5.0) / 5.0).collect()).unwrap();

        // f(x) = sum(resize(relu(conv(x)) + x, 8x8) * r)
        let run = |x: &Tensor| -> (Tape, ValueId, ValueId) {
            let mut tape = Tape::new();
            let xi = tape.input(x.clone(), true);
            let c = tape.conv(&params, w, b, geom, xi).unwrap();
            let r = tape.relu(c);
            let s = tape.add(r, xi).unwrap();
            let out = tape.resize(s, 8, 8).unwrap();
            (tape, xi, out)
        };
        let weights: Vec<f32> = (0..128).map(|i| ((i % 5) as f32 - 2.0) * 0.3).collect();
        let objective = |x: &Tensor| -> f64 {
            let (tape, _, out) = run(x);
            tape.value(out).data().iter().zip(&weights).map(|(a, b)| (*a * *b) as f64).sum()
        };
        let (tape, xi, out) = run(&x0);
        let seed = Tensor::from_vec([1, 2, 8, 8], weights.clone()).unwrap();
        let mut grads = Gradients::zeros_like(&params);
        let got = tape.backward(&params, vec![(out, seed)], Some(&mut grads));
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, xi);
        let dx = &got[0].1;
        let eps = 1e-3;
        for i in 0..32 {
            let mut xp = x0.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x0.clone();
            xm.data_mut()[i] -= eps;
            let fd = (objective(&xp) - objective(&xm)) / (2.0 * eps as f64);
            assert!((fd - dx.data()[i] as f64).abs() < 5e-3, "{i}: {fd} vs {}", dx.data()[i]);
        }
        assert!(grads.get(w).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn frozen_parameters_receive_no_gradient() {
        let geom = ConvGeom::new(1, 1, 1);
        let specs = vec![
            TensorSpec {
                name: "w".into(),
                shape: geom.weight_shape(),
                init: Init::FanInNormal { fan_in: 1, gain: 1.0 },
            },
            TensorSpec { name: "b".into(), shape: vec![1], init: Init::Zeros },
        ];
        let params = ParameterSet::init(&specs, 1);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::filled([1, 1, 2, 2], 1.0), true);
        let y = tape.conv(&params, ParamId(0), ParamId(1), geom, x).unwrap();
        let got = tape.backward(&params, vec![(y, Tensor::filled([1, 1, 2, 2], 1.0))], None);
        let w = params.get(ParamId(0))[0];
        assert!(got[0].1.data().iter().all(|v| (*v - w).abs() < 1e-6));
    }
}
