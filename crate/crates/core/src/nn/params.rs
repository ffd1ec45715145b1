//! Named parameter storage with seeded initialization and a small binary
//! container format.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RDPARAM1";

/// How a tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Normal with standard deviation `sqrt(gain / fan_in)`.
    FanInNormal {
        fan_in: usize,
        gain: f32,
    },
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitRecord {
    pub name: String,
    pub init: Init,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Index of a tensor inside a [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// All learnable tensors of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    tensors: Vec<NamedTensor>,
    init_seed: u64,
    init_scheme: Vec<InitRecord>,
}

impl ParameterSet {
    /// Draws every tensor from a single ChaCha stream in declaration order.
    pub fn init(specs: &[TensorSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(specs.len());
        let mut init_scheme = Vec::with_capacity(specs.len());
        for spec in specs {
            let len: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Zeros => vec![0.0; len],
                Init::FanInNormal { fan_in, gain } => {
                    let std = (gain / fan_in.max(1) as f32).sqrt();
                    let normal = Normal::new(0.0f32, std).expect("positive std");
                    (0..len).map(|_| normal.sample(&mut rng)).collect()
                }
            };
            tensors.push(NamedTensor { name: spec.name.clone(), shape: spec.shape.clone(), data });
            init_scheme.push(InitRecord { name: spec.name.clone(), init: spec.init });
        }
        Self { tensors, init_seed: seed, init_scheme }
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn init_scheme(&self) -> &[InitRecord] {
        &self.init_scheme
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.tensors[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.tensors[id.0].data
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut NamedTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Checks that names and shapes line up with a layout.
    pub fn check_layout(&self, specs: &[TensorSpec]) -> Result<()> {
        if specs.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", specs.len(), self.tensors.len())));
        }
        for (spec, t) in specs.iter().zip(&self.tensors) {
            if spec.name != t.name || spec.shape != t.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: expected {} {:?}, found {} {:?}",
                    spec.name, spec.shape, t.name, t.shape
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.num_values() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.init_seed.to_le_bytes());
        let scheme = serde_json::to_vec(&self.init_scheme).expect("init scheme serializes");
        out.extend_from_slice(&(scheme.len() as u64).to_le_bytes());
        out.extend_from_slice(&scheme);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u64).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u64).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a parameter container".into()));
        }
        let init_seed = read_u64(&mut r)?;
        let scheme_len = read_u64(&mut r)? as usize;
        let mut scheme = vec![0u8; scheme_len];
        read_exact(&mut r, &mut scheme)?;
        let init_scheme: Vec<InitRecord> = serde_json::from_slice(&scheme)?;
        let count = read_u64(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u64(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
            let ndim = read_u64(&mut r)? as usize;
            let shape = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut raw = vec![0u8; len * 4];
            read_exact(&mut r, &mut raw)?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes after parameter container".into()));
        }
        Ok(Self { tensors, init_seed, init_scheme })
    }

    /// SHA-256 of the serialized container, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Checkpoint("truncated parameter container".into()))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Gradient buffers aligned with a [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    buffers: Vec<Vec<f32>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        Self { buffers: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect() }
    }

    pub fn zero(&mut self) {
        for b in &mut self.buffers {
            b.fill(0.0);
        }
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.buffers[id.0]
    }

    /// Mutable access to two distinct buffers at once.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [f32], &mut [f32]) {
        assert_ne!(a.0, b.0);
        if a.0 < b.0 {
            let (lo, hi) = self.buffers.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.buffers.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }

    pub fn buffers(&self) -> &[Vec<f32>] {
        &self.buffers
    }

    pub fn all_finite(&self) -> bool {
        self.buffers.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<TensorSpec> {
        vec![
            TensorSpec {
                name: "a.weight".into(),
                shape: vec![4, 3, 3, 3],
                init: Init::FanInNormal { fan_in: 27, gain: 2.0 },
            },
            TensorSpec { name: "a.bias".into(), shape: vec![4], init: Init::Zeros },
        ]
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = ParameterSet::init(&specs(), 7);
        let b = ParameterSet::init(&specs(), 7);
        let c = ParameterSet::init(&specs(), 8);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert!(a.all_finite());
        assert!(a.get(ParamId(1)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn container_round_trip() {
        let a = ParameterSet::init(&specs(), 1);
        let b = ParameterSet::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a, b);
        b.check_layout(&specs()).unwrap();
        let bytes = a.to_bytes();
        assert!(ParameterSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
