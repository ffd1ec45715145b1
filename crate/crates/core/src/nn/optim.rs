//! Momentum SGD for generators and Adam for discriminators.

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParameterSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    #[serde(default = "default_sgd_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_sgd_lr() -> f64 {
    4e-4
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    1e-4
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: default_sgd_lr(), momentum: default_momentum(), weight_decay: default_weight_decay() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_adam_lr")]
    pub lr: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_adam_lr() -> f64 {
    1e-4
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.99)
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: default_adam_lr(), betas: default_betas(), eps: default_eps() }
    }
}

/// Momentum buffers (PyTorch convention: `v = mu*v + g + wd*p`, `p -= lr*v`).
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub config: SgdConfig,
    pub velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(config: SgdConfig, params: &ParameterSet) -> Self {
        Self { config, velocity: params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect() }
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients, lr: f64) {
        let mu = self.config.momentum as f32;
        let wd = self.config.weight_decay as f32;
        let lr = lr as f32;
        for (i, g) in grads.buffers().iter().enumerate() {
            let p = params.get_mut(super::params::ParamId(i));
            let v = &mut self.velocity[i];
            for ((pv, vv), gv) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                let d = gv + wd * *pv;
                *vv = mu * *vv + d;
                *pv -= lr * *vv;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParameterSet) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self { config, step_count: 0, first: zeros.clone(), second: zeros }
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients, lr: f64) {
        self.step_count += 1;
        let (b1, b2) = self.config.betas;
        let bc1 = 1.0 - b1.powi(self.step_count as i32);
        let bc2 = 1.0 - b2.powi(self.step_count as i32);
        let step = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let (b1, b2, eps) = (b1 as f32, b2 as f32, self.config.eps as f32);
        for (i, g) in grads.buffers().iter().enumerate() {
            let p = params.get_mut(super::params::ParamId(i));
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                p[j] -= step * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

/// Flattens optimizer buffers into little-endian bytes for checkpoints.
pub(crate) fn buffers_to_bytes(buffers: &[Vec<f32>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(buffers.len() as u64).to_le_bytes());
    for b in buffers {
        out.extend_from_slice(&(b.len() as u64).to_le_bytes());
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) fn buffers_from_bytes(bytes: &mut &[u8]) -> Option<Vec<Vec<f32>>> {
    fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
        if bytes.len() < n {
            return None;
        }
        let (head, tail) = bytes.split_at(n);
        *bytes = tail;
        Some(head)
    }
    let count = u64::from_le_bytes(take(bytes, 8)?.try_into().ok()?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u64::from_le_bytes(take(bytes, 8)?.try_into().ok()?) as usize;
        let raw = take(bytes, len * 4)?;
        out.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect());
    }
    Some(out)
}
