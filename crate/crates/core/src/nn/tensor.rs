use crate::error::{Error, Result};

/// Dense `f32` tensor in NCHW layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { shape: [n, c, h, w], data: vec![0.0; n * c * h * w] }
    }

    pub fn filled(shape: [usize; 4], value: f32) -> Self {
        Self { shape, data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(format!("tensor of shape {shape:?} needs {expected} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    /// Stacks equally shaped single items (`[1, c, h, w]` or `[c, h, w]` data) into a batch.
    pub fn stack(items: &[Tensor]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.len() * first.data.len());
        for item in items {
            if item.shape[1..] != first.shape[1..] {
                return Err(Error::shape(format!("cannot stack {:?} with {:?}", item.shape, first.shape)));
            }
            data.extend_from_slice(&item.data);
        }
        let n = data.len() / (c * h * w);
        Ok(Self { shape: [n, c, h, w], data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    pub fn h(&self) -> usize {
        self.shape[2]
    }
    pub fn w(&self) -> usize {
        self.shape[3]
    }
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
    pub fn item(&self, i: usize) -> &[f32] {
        let len = self.item_len();
        &self.data[i * len..(i + 1) * len]
    }
    pub fn item_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.item_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    /// Copies batch item `i` out as a `[1, c, h, w]` tensor.
    pub fn select(&self, i: usize) -> Tensor {
        let [_, c, h, w] = self.shape;
        Tensor { shape: [1, c, h, w], data: self.item(i).to_vec() }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rotates every plane by 180 degrees.
    pub fn rotate180(&self) -> Tensor {
        let plane = self.plane();
        let mut out = self.clone();
        for (dst, src) in out.data.chunks_mut(plane).zip(self.data.chunks(plane)) {
            for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                *d = *s;
            }
        }
        out
    }
}
