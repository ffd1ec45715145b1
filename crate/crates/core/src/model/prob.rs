use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Per-pixel two-class prediction. Planes are stored background first, road
/// second; `probs` is the softmax of `logits`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    logits: Vec<f32>,
    probs: Vec<f32>,
}

impl ProbabilityMap {
    pub fn from_logits(height: usize, width: usize, logits: Vec<f32>) -> Result<Self> {
        let plane = height * width;
        if logits.len() != 2 * plane {
            return Err(Error::shape(format!("{height}x{width} two-class map needs {} logits", 2 * plane)));
        }
        let mut probs = vec![0.0f32; 2 * plane];
        for i in 0..plane {
            let (bg, road) = softmax2(logits[i], logits[plane + i]);
            probs[i] = bg;
            probs[plane + i] = road;
        }
        Ok(Self { height, width, logits, probs })
    }

    /// Splits a `[N, 2, H, W]` logit tensor into per-image maps.
    pub fn batch_from_logits(logits: &Tensor) -> Result<Vec<Self>> {
        if logits.c() != 2 {
            return Err(Error::shape(format!("expected 2 logit channels, got {}", logits.c())));
        }
        (0..logits.n()).map(|i| Self::from_logits(logits.h(), logits.w(), logits.item(i).to_vec())).collect()
    }

    /// Map with road probability `p` everywhere (logits `0` and `logit(p)`).
    pub fn from_road_probs(height: usize, width: usize, road: &[f32]) -> Result<Self> {
        let plane = height * width;
        if road.len() != plane {
            return Err(Error::shape("road probability plane has the wrong size"));
        }
        let mut logits = vec![0.0f32; 2 * plane];
        for (i, p) in road.iter().enumerate() {
            let p = (*p as f64).clamp(1e-12, 1.0 - 1e-12);
            logits[plane + i] = (p / (1.0 - p)).ln() as f32;
        }
        let mut map = Self::from_logits(height, width, logits)?;
        for (i, p) in road.iter().enumerate() {
            map.probs[plane + i] = *p;
            map.probs[i] = 1.0 - *p;
        }
        Ok(map)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn logits(&self) -> &[f32] {
        &self.logits
    }
    pub fn probs(&self) -> &[f32] {
        &self.probs
    }
    pub fn road_probs(&self) -> &[f32] {
        &self.probs[self.height * self.width..]
    }
    pub fn background_logits(&self) -> &[f32] {
        &self.logits[..self.height * self.width]
    }
    pub fn road_logits(&self) -> &[f32] {
        &self.logits[self.height * self.width..]
    }
}

pub(crate) fn softmax2(a: f32, b: f32) -> (f32, f32) {
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let s = ea + eb;
    (ea / s, eb / s)
}

/// Softmax over the channel axis of a `[N, 2, H, W]` tensor.
pub(crate) fn softmax_channels(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let plane = logits.plane();
    for i in 0..logits.n() {
        let item = out.item_mut(i);
        let (bg, road) = item.split_at_mut(plane);
        for (a, b) in bg.iter_mut().zip(road.iter_mut()) {
            let (pa, pb) = softmax2(*a, *b);
            *a = pa;
            *b = pb;
        }
    }
    out
}

/// Pulls a gradient w.r.t. softmax probabilities back to the logits:
/// `dl_c = p_c * (dp_c - sum_k p_k dp_k)`.
pub(crate) fn softmax_channels_backward(probs: &Tensor, dprobs: &Tensor) -> Tensor {
    let mut dl = dprobs.clone();
    let plane = probs.plane();
    for i in 0..probs.n() {
        let p = probs.item(i);
        let d = dl.item_mut(i);
        for j in 0..plane {
            let (p0, p1) = (p[j], p[plane + j]);
            let (d0, d1) = (d[j], d[plane + j]);
            let dot = p0 * d0 + p1 * d1;
            d[j] = p0 * (d0 - dot);
            d[plane + j] = p1 * (d1 - dot);
        }
    }
    dl
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probabilities_normalize_even_for_extreme_logits() {
        let logits = vec![0.0, 100.0, -80.0, 3.0, 0.0, -100.0, 80.0, 3.0];
        let m = ProbabilityMap::from_logits(2, 2, logits).unwrap();
        for i in 0..4 {
            let s = m.probs()[i] + m.probs()[4 + i];
            assert!((s - 1.0).abs() < 1e-6);
            assert!(m.probs()[i].is_finite());
        }
        assert!((m.road_probs()[3] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let logits = Tensor::from_vec([1, 2, 1, 3], vec![0.3, -1.0, 2.0, 0.1, 0.5, -0.7]).unwrap();
        let w = [0.2f32, -0.4, 1.1, 0.9, -0.3, 0.6];
        let f = |l: &Tensor| -> f64 { softmax_channels(l).data().iter().zip(&w).map(|(p, w)| (*p * *w) as f64).sum() };
        let probs = softmax_channels(&logits);
        let dp = Tensor::from_vec([1, 2, 1, 3], w.to_vec()).unwrap();
        let dl = softmax_channels_backward(&probs, &dp);
        for i in 0..6 {
            let mut a = logits.clone();
            a.data_mut()[i] += 1e-3;
            let mut b = logits.clone();
            b.data_mut()[i] -= 1e-3;
            let fd = (f(&a) - f(&b)) / 2e-3;
            assert!((fd - dl.data()[i] as f64).abs() < 1e-4);
        }
    }
}
