//! Layer kernels with explicit backward passes.

use serde::{Deserialize, Serialize};

use super::gemm::sgemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    /// Extra zero rows/columns appended after the bottom/right edge.
    #[serde(default)]
    pub extra_bottom: usize,
    #[serde(default)]
    pub extra_right: usize,
}

impl ConvGeom {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self { in_channels, out_channels, kernel, stride: 1, padding: 0, dilation: 1, extra_bottom: 0, extra_right: 0 }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn extra(mut self, bottom: usize, right: usize) -> Self {
        self.extra_bottom = bottom;
        self.extra_right = right;
        self
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let (ph, pw) = (h + 2 * self.padding + self.extra_bottom, w + 2 * self.padding + self.extra_right);
        if ph < span || pw < span {
            return Err(Error::shape(format!(
                "{h}x{w} input too small for a {k}x{k} convolution (dilation {d}, padding {p})",
                k = self.kernel,
                d = self.dilation,
                p = self.padding
            )));
        }
        Ok(((ph - span) / self.stride + 1, (pw - span) / self.stride + 1))
    }
}

fn im2col(x: &[f32], h: usize, w: usize, g: &ConvGeom, oh: usize, ow: usize, cols: &mut [f32]) {
    let k = g.kernel;
    let p = oh * ow;
    for c in 0..g.in_channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let dy = (ky * g.dilation) as isize - g.padding as isize;
                let dx = (kx * g.dilation) as isize - g.padding as isize;
                for oy in 0..oh {
                    let iy = (oy * g.stride) as isize + dy;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride) as isize + dx;
                        *o = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], h: usize, w: usize, g: &ConvGeom, oh: usize, ow: usize, dx_out: &mut [f32]) {
    let k = g.kernel;
    let p = oh * ow;
    for c in 0..g.in_channels {
        let plane = &mut dx_out[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                let dy = (ky * g.dilation) as isize - g.padding as isize;
                let dx = (kx * g.dilation) as isize - g.padding as isize;
                for oy in 0..oh {
                    let iy = (oy * g.stride) as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride) as isize + dx;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(x: &Tensor, weight: &[f32], bias: &[f32], g: &ConvGeom) -> Result<Tensor> {
    if x.c() != g.in_channels {
        return Err(Error::shape(format!("convolution expects {} input channels, got {}", g.in_channels, x.c())));
    }
    let (h, w) = (x.h(), x.w());
    let (oh, ow) = g.output_size(h, w)?;
    let p = oh * ow;
    let mut out = Tensor::zeros(x.n(), g.out_channels, oh, ow);
    let mut cols = vec![0.0f32; g.patch_len() * p];
    for i in 0..x.n() {
        im2col(x.item(i), h, w, g, oh, ow, &mut cols);
        let y = out.item_mut(i);
        for (o, row) in y.chunks_mut(p).enumerate() {
            row.fill(bias[o]);
        }
        sgemm(g.out_channels, g.patch_len(), p, weight, false, &cols, false, 1.0, y);
    }
    Ok(out)
}

/// Accumulates weight/bias gradients (when given) and returns the input gradient
/// when `want_dx` is set.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &[f32],
    g: &ConvGeom,
    dy: &Tensor,
    param_grads: Option<(&mut [f32], &mut [f32])>,
    want_dx: bool,
) -> Option<Tensor> {
    let (h, w) = (x.h(), x.w());
    let (oh, ow) = (dy.h(), dy.w());
    let p = oh * ow;
    let kl = g.patch_len();
    let mut cols = vec![0.0f32; kl * p];
    let mut dcols = vec![0.0f32; kl * p];
    let mut dx = want_dx.then(|| Tensor::zeros(x.n(), x.c(), h, w));
    let mut param_grads = param_grads;
    for i in 0..x.n() {
        let dyi = dy.item(i);
        if let Some((dw, db)) = param_grads.as_mut() {
            im2col(x.item(i), h, w, g, oh, ow, &mut cols);
            sgemm(g.out_channels, p, kl, dyi, false, &cols, true, 1.0, dw);
            for (o, row) in dyi.chunks(p).enumerate() {
                db[o] += row.iter().sum::<f32>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            sgemm(kl, g.out_channels, p, weight, true, dyi, false, 0.0, &mut dcols);
            col2im(&dcols, h, w, g, oh, ow, dx.item_mut(i));
        }
    }
    dx
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    leaky_relu_forward(x, 0.0)
}

pub fn leaky_relu_forward(x: &Tensor, slope: f32) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
    y
}

/// Gradient through a (leaky) ReLU given the layer input.
pub fn leaky_relu_backward(x: &Tensor, dy: &Tensor, slope: f32) -> Tensor {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v < 0.0 {
            *d *= slope;
        } else if v == 0.0 && slope == 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Bilinear interpolation weights along one axis with half-pixel centres
/// (the `align_corners = false` convention).
#[derive(Clone, Debug, PartialEq)]
struct AxisTable {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f32>,
}

impl AxisTable {
    fn new(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        let mut lo = Vec::with_capacity(output);
        let mut hi = Vec::with_capacity(output);
        let mut frac = Vec::with_capacity(output);
        for o in 0..output {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            lo.push(i0);
            hi.push(i1);
            frac.push((src - i0 as f64) as f32);
        }
        Self { lo, hi, frac }
    }
}

/// Bilinear resize to a fixed output size.
#[derive(Clone, Debug, PartialEq)]
pub struct Resize {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    rows: AxisTable,
    cols: AxisTable,
}

impl Resize {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Result<Self> {
        if in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0 {
            return Err(Error::shape("bilinear resize with an empty extent"));
        }
        Ok(Self { in_h, in_w, out_h, out_w, rows: AxisTable::new(in_h, out_h), cols: AxisTable::new(in_w, out_w) })
    }

    pub fn out_size(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        debug_assert_eq!((x.h(), x.w()), (self.in_h, self.in_w));
        let mut y = Tensor::zeros(x.n(), x.c(), self.out_h, self.out_w);
        let (ip, op) = (self.in_h * self.in_w, self.out_h * self.out_w);
        for (src, dst) in x.data().chunks(ip).zip(y.data_mut().chunks_mut(op)) {
            for oy in 0..self.out_h {
                let (y0, y1, fy) = (self.rows.lo[oy], self.rows.hi[oy], self.rows.frac[oy]);
                for ox in 0..self.out_w {
                    let (x0, x1, fx) = (self.cols.lo[ox], self.cols.hi[ox], self.cols.frac[ox]);
                    let top = src[y0 * self.in_w + x0] * (1.0 - fx) + src[y0 * self.in_w + x1] * fx;
                    let bot = src[y1 * self.in_w + x0] * (1.0 - fx) + src[y1 * self.in_w + x1] * fx;
                    dst[oy * self.out_w + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        y
    }

    pub fn backward(&self, dy: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(dy.n(), dy.c(), self.in_h, self.in_w);
        let (ip, op) = (self.in_h * self.in_w, self.out_h * self.out_w);
        for (dst, src) in dx.data_mut().chunks_mut(ip).zip(dy.data().chunks(op)) {
            for oy in 0..self.out_h {
                let (y0, y1, fy) = (self.rows.lo[oy], self.rows.hi[oy], self.rows.frac[oy]);
                for ox in 0..self.out_w {
                    let (x0, x1, fx) = (self.cols.lo[ox], self.cols.hi[ox], self.cols.frac[ox]);
                    let g = src[oy * self.out_w + ox];
                    dst[y0 * self.in_w + x0] += g * (1.0 - fy) * (1.0 - fx);
                    dst[y0 * self.in_w + x1] += g * (1.0 - fy) * fx;
                    dst[y1 * self.in_w + x0] += g * fy * (1.0 - fx);
                    dst[y1 * self.in_w + x1] += g * fy * fx;
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f32 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
    }

    fn random_tensor(shape: [usize; 4], seed: &mut u64) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| lcg(seed)).collect()).unwrap()
    }

    /// Direct nested-loop convolution.
    fn naive_conv(x: &Tensor, w: &[f32], b: &[f32], g: &ConvGeom) -> Tensor {
        let (oh, ow) = g.output_size(x.h(), x.w()).unwrap();
        let mut y = Tensor::zeros(x.n(), g.out_channels, oh, ow);
        let k = g.kernel;
        for n in 0..x.n() {
            for o in 0..g.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = b[o];
                        for c in 0..g.in_channels {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h() as isize || ix >= x.w() as isize {
                                        continue;
                                    }
                                    let xv = x.item(n)[(c * x.h() + iy as usize) * x.w() + ix as usize];
                                    s += xv * w[((o * g.in_channels + c) * k + ky) * k + kx];
                                }
                            }
                        }
                        y.item_mut(n)[(o * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_for_strided_and_dilated_geometry() {
        let mut seed = 3;
        for g in [
            ConvGeom::new(3, 4, 3).padding(1),
            ConvGeom::new(2, 5, 4).stride(2).padding(1),
            ConvGeom::new(3, 2, 3).padding(6).dilation(6),
            ConvGeom::new(4, 3, 1),
            ConvGeom::new(2, 2, 4).stride(2).padding(1).extra(1, 1),
        ] {
            let side = if g.extra_bottom > 0 { 7 } else { 8 };
            let x = random_tensor([2, g.in_channels, side, side], &mut seed);
            let w: Vec<f32> = (0..g.out_channels * g.patch_len()).map(|_| lcg(&mut seed)).collect();
            let b: Vec<f32> = (0..g.out_channels).map(|_| lcg(&mut seed)).collect();
            let fast = conv2d_forward(&x, &w, &b, &g).unwrap();
            let slow = naive_conv(&x, &w, &b, &g);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut seed = 11;
        let g = ConvGeom::new(2, 3, 4).stride(2).padding(1);
        let x = random_tensor([1, 2, 6, 6], &mut seed);
        let w: Vec<f32> = (0..g.out_channels * g.patch_len()).map(|_| lcg(&mut seed)).collect();
        let b = vec![0.1, -0.2, 0.3];
        let y = conv2d_forward(&x, &w, &b, &g).unwrap();
        let r = random_tensor(y.shape(), &mut seed);
        // objective = <r, y>
        let objective = |x: &Tensor, w: &[f32]| -> f64 {
            let y = conv2d_forward(x, w, &b, &g).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 3];
        let dx = conv2d_backward(&x, &w, &g, &r, Some((&mut dw, &mut db)), true).unwrap();
        let eps = 1e-2f32;
        for i in (0..w.len()).step_by(5) {
            let mut wp = w.clone();
            wp[i] += eps;
            let mut wm = w.clone();
            wm[i] -= eps;
            let fd = (objective(&x, &wp) - objective(&x, &wm)) / (2.0 * eps as f64);
            assert!((fd - dw[i] as f64).abs() < 1e-2, "dw[{i}] {fd} vs {}", dw[i]);
        }
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (objective(&xp, &w) - objective(&xm, &w)) / (2.0 * eps as f64);
            assert!((fd - dx.data()[i] as f64).abs() < 1e-2, "dx[{i}] {fd} vs {}", dx.data()[i]);
        }
        let db_expected: Vec<f32> = r.data().chunks(r.plane()).map(|c| c.iter().sum()).collect();
        for (a, e) in db.iter().zip(&db_expected) {
            assert!((a - e).abs() < 1e-4);
        }
    }

    #[test]
    fn resize_backward_is_adjoint_of_forward() {
        let mut seed = 5;
        let rs = Resize::new(4, 4, 32, 32).unwrap();
        let x = random_tensor([1, 2, 4, 4], &mut seed);
        let r = random_tensor([1, 2, 32, 32], &mut seed);
        let y = rs.forward(&x);
        let lhs: f64 = y.data().iter().zip(r.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let dx = rs.backward(&r);
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-3, "{lhs} vs {rhs}");
    }

    #[test]
    fn resize_keeps_constants_and_identity() {
        let x = Tensor::filled([1, 3, 4, 4], 2.5);
        let y = Resize::new(4, 4, 8, 8).unwrap().forward(&x);
        assert!(y.data().iter().all(|v| (*v - 2.5).abs() < 1e-6));
        let mut seed = 9;
        let z = random_tensor([1, 1, 5, 7], &mut seed);
        assert_eq!(Resize::new(5, 7, 5, 7).unwrap().forward(&z), z);
    }

    #[test]
    fn too_small_input_is_a_shape_error() {
        let g = ConvGeom::new(1, 1, 4).stride(2).padding(1);
        assert!(g.output_size(1, 1).is_err());
        assert_eq!(g.output_size(2, 2).unwrap(), (1, 1));
    }
}
