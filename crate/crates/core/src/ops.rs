//! Float kernels shared by the graph executor: GEMM, im2col convolution,
//! pooling and batch normalization.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Shape, Tensor};

/// Output extent of a sliding window, or `None` if the window does not fit.
pub fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * n + j] += acc;
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// Geometry of a 2-D convolution over one batch item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        in_h: usize,
        in_w: usize,
    ) -> Option<Self> {
        let out_h = out_extent(in_h, kernel, stride, padding)?;
        let out_w = out_extent(in_w, kernel, stride, padding)?;
        Some(ConvGeom { in_ch, out_ch, kernel, stride, padding, in_h, in_w, out_h, out_w })
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// 1×1, stride 1, no padding: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Input coordinate under kernel tap `k` for output coordinate `o`, if inside.
    #[inline]
    fn tap(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        if pos >= 0 && (pos as usize) < extent {
            Some(pos as usize)
        } else {
            None
        }
    }
}

/// Unfolds one item into `cols[patch_len × out_plane]`; rows ordered `(c, ky, kx)`.
pub fn im2col(g: &ConvGeom, item: &[f32], cols: &mut [f32]) {
    let plane = g.out_plane();
    for c in 0..g.in_ch {
        let src = &item[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = g.tap(oy, ky, g.in_h);
                    for ox in 0..g.out_w {
                        dst[oy * g.out_w + ox] = match (iy, g.tap(ox, kx, g.in_w)) {
                            (Some(y), Some(x)) => src[y * g.in_w + x],
                            _ => 0.0,
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an item gradient.
pub fn col2im(g: &ConvGeom, cols: &[f32], item: &mut [f32]) {
    let plane = g.out_plane();
    for c in 0..g.in_ch {
        let dst = &mut item[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let Some(y) = g.tap(oy, ky, g.in_h) else { continue };
                    for ox in 0..g.out_w {
                        if let Some(x) = g.tap(ox, kx, g.in_w) {
                            dst[y * g.in_w + x] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded cross-correlation; `weight` is `(out_ch, in_ch, k, k)` flattened.
pub fn conv2d_forward(g: &ConvGeom, input: &Tensor, weight: &[f32]) -> Tensor {
    let n = input.shape().n();
    let plane = g.out_plane();
    let mut out = Tensor::zeros(Shape::new(n, g.out_ch, g.out_h, g.out_w));
    let mut cols = vec![0.0f32; if g.is_pointwise() { 0 } else { g.patch_len() * plane }];
    for b in 0..n {
        let item = input.item(b);
        let cols_ref: &[f32] = if g.is_pointwise() {
            item
        } else {
            im2col(g, item, &mut cols);
            &cols
        };
        gemm_nn(g.out_ch, g.patch_len(), plane, weight, cols_ref, out.item_mut(b));
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to its input (optional) and weight.
pub fn conv2d_backward(
    g: &ConvGeom,
    input: &Tensor,
    weight: &[f32],
    grad_out: &Tensor,
    want_input: bool,
) -> (Option<Tensor>, Vec<f32>) {
    let n = input.shape().n();
    let plane = g.out_plane();
    let patch = g.patch_len();
    let mut grad_w = vec![0.0f32; g.out_ch * patch];
    let mut grad_in = want_input.then(|| Tensor::zeros(input.shape()));
    let mut cols = vec![0.0f32; patch * plane];
    for b in 0..n {
        let go = grad_out.item(b);
        let item = input.item(b);
        let cols_ref: &[f32] = if g.is_pointwise() {
            item
        } else {
            im2col(g, item, &mut cols);
            &cols
        };
        gemm_nt(g.out_ch, plane, patch, go, cols_ref, &mut grad_w);
        if let Some(gi) = grad_in.as_mut() {
            if g.is_pointwise() {
                gemm_tn(patch, g.out_ch, plane, weight, go, gi.item_mut(b));
            } else {
                cols.iter_mut().for_each(|v| *v = 0.0);
                gemm_tn(patch, g.out_ch, plane, weight, go, &mut cols);
                col2im(g, &cols, gi.item_mut(b));
            }
        }
    }
    (grad_in, grad_w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeom {
    pub fn new(kernel: usize, stride: usize, padding: usize, in_h: usize, in_w: usize) -> Option<Self> {
        Some(PoolGeom {
            kernel,
            stride,
            padding,
            out_h: out_extent(in_h, kernel, stride, padding)?,
            out_w: out_extent(in_w, kernel, stride, padding)?,
        })
    }

    fn window(&self, o: usize, extent: usize) -> core::ops::Range<usize> {
        let start = (o * self.stride) as isize - self.padding as isize;
        let end = start + self.kernel as isize;
        (start.max(0) as usize)..(end.min(extent as isize) as usize)
    }
}

/// Max pooling; returns the output and the flat input index of each maximum.
pub fn max_pool_forward(p: &PoolGeom, input: &Tensor) -> (Tensor, Vec<u32>) {
    let s = input.shape();
    let out_shape = Shape::new(s.n(), s.c(), p.out_h, p.out_w);
    let mut out = Tensor::zeros(out_shape);
    let mut arg = vec![0u32; out_shape.numel()];
    let src = input.data();
    let mut o = 0;
    for nc in 0..s.n() * s.c() {
        let base = nc * s.plane();
        for oy in 0..p.out_h {
            for ox in 0..p.out_w {
                let mut best = f32::NEG_INFINITY;
                let mut best_i = base;
                for y in p.window(oy, s.h()) {
                    for x in p.window(ox, s.w()) {
                        let i = base + y * s.w() + x;
                        if src[i] > best {
                            best = src[i];
                            best_i = i;
                        }
                    }
                }
                out.data_mut()[o] = best;
                arg[o] = best_i as u32;
                o += 1;
            }
        }
    }
    (out, arg)
}

pub fn max_pool_backward(input_shape: Shape, arg: &[u32], grad_out: &Tensor) -> Tensor {
    let mut gi = Tensor::zeros(input_shape);
    for (&i, &g) in arg.iter().zip(grad_out.data()) {
        gi.data_mut()[i as usize] += g;
    }
    gi
}

/// Average pooling with zero padding counted in the divisor (`kernel²`).
pub fn avg_pool_forward(p: &PoolGeom, input: &Tensor) -> Tensor {
    let s = input.shape();
    let mut out = Tensor::zeros(Shape::new(s.n(), s.c(), p.out_h, p.out_w));
    let inv = 1.0 / (p.kernel * p.kernel) as f32;
    let src = input.data();
    let mut o = 0;
    for nc in 0..s.n() * s.c() {
        let base = nc * s.plane();
        for oy in 0..p.out_h {
            for ox in 0..p.out_w {
                let mut acc = 0.0;
                for y in p.window(oy, s.h()) {
                    for x in p.window(ox, s.w()) {
                        acc += src[base + y * s.w() + x];
                    }
                }
                out.data_mut()[o] = acc * inv;
                o += 1;
            }
        }
    }
    out
}

pub fn avg_pool_backward(p: &PoolGeom, input_shape: Shape, grad_out: &Tensor) -> Tensor {
    let s = input_shape;
    let mut gi = Tensor::zeros(s);
    let inv = 1.0 / (p.kernel * p.kernel) as f32;
    let go = grad_out.data();
    let mut o = 0;
    for nc in 0..s.n() * s.c() {
        let base = nc * s.plane();
        for oy in 0..p.out_h {
            for ox in 0..p.out_w {
                let g = go[o] * inv;
                for y in p.window(oy, s.h()) {
                    for x in p.window(ox, s.w()) {
                        gi.data_mut()[base + y * s.w() + x] += g;
                    }
                }
                o += 1;
            }
        }
    }
    gi
}

/// Per-channel mean and biased variance over `(N, H, W)`.
pub fn channel_stats(input: &Tensor) -> (Vec<f32>, Vec<f32>) {
    let s = input.shape();
    let count = (s.n() * s.plane()) as f64;
    let mut mean = vec![0.0f32; s.c()];
    let mut var = vec![0.0f32; s.c()];
    for c in 0..s.c() {
        let mut acc = 0.0f64;
        for b in 0..s.n() {
            let off = (b * s.c() + c) * s.plane();
            acc += input.data()[off..off + s.plane()].iter().map(|&x| x as f64).sum::<f64>();
        }
        let m = acc / count;
        let mut sq = 0.0f64;
        for b in 0..s.n() {
            let off = (b * s.c() + c) * s.plane();
            sq += input.data()[off..off + s.plane()]
                .iter()
                .map(|&x| {
                    let d = x as f64 - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[c] = m as f32;
        var[c] = (sq / count) as f32;
    }
    (mean, var)
}

/// Applies `y = gamma · (x − mean) / sqrt(var + eps) + beta`; returns `y` and `x̂`.
pub fn batch_norm_apply(
    input: &Tensor,
    mean: &[f32],
    var: &[f32],
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
) -> (Tensor, Tensor) {
    let s = input.shape();
    let mut y = Tensor::zeros(s);
    let mut xhat = Tensor::zeros(s);
    for b in 0..s.n() {
        for c in 0..s.c() {
            let inv_std = 1.0 / libm::sqrtf(var[c] + eps);
            let off = (b * s.c() + c) * s.plane();
            for i in off..off + s.plane() {
                let h = (input.data()[i] - mean[c]) * inv_std;
                xhat.data_mut()[i] = h;
                y.data_mut()[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat)
}

/// Per-channel sums of `g` and `g · x̂` (the affine-parameter gradients).
pub fn batch_norm_param_grads(grad_out: &Tensor, xhat: &Tensor) -> (Vec<f32>, Vec<f32>) {
    let s = grad_out.shape();
    let mut d_gamma = vec![0.0f32; s.c()];
    let mut d_beta = vec![0.0f32; s.c()];
    for b in 0..s.n() {
        for c in 0..s.c() {
            let off = (b * s.c() + c) * s.plane();
            let mut dg = 0.0f64;
            let mut db = 0.0f64;
            for i in off..off + s.plane() {
                let g = grad_out.data()[i] as f64;
                dg += g * xhat.data()[i] as f64;
                db += g;
            }
            d_gamma[c] += dg as f32;
            d_beta[c] += db as f32;
        }
    }
    (d_gamma, d_beta)
}

/// Input gradient of batch norm using batch statistics.
pub fn batch_norm_backward_train(
    grad_out: &Tensor,
    xhat: &Tensor,
    var: &[f32],
    gamma: &[f32],
    eps: f32,
    d_gamma: &[f32],
    d_beta: &[f32],
) -> Tensor {
    let s = grad_out.shape();
    let m = (s.n() * s.plane()) as f32;
    let mut gi = Tensor::zeros(s);
    for b in 0..s.n() {
        for c in 0..s.c() {
            let inv_std = 1.0 / libm::sqrtf(var[c] + eps);
            let k = gamma[c] * inv_std / m;
            let off = (b * s.c() + c) * s.plane();
            for i in off..off + s.plane() {
                let g = grad_out.data()[i];
                gi.data_mut()[i] = k * (m * g - d_beta[c] - xhat.data()[i] * d_gamma[c]);
            }
        }
    }
    gi
}

/// Input gradient of batch norm when normalizing with fixed (running) statistics.
pub fn batch_norm_backward_eval(grad_out: &Tensor, var: &[f32], gamma: &[f32], eps: f32) -> Tensor {
    let s = grad_out.shape();
    let mut gi = Tensor::zeros(s);
    for b in 0..s.n() {
        for c in 0..s.c() {
            let k = gamma[c] / libm::sqrtf(var[c] + eps);
            let off = (b * s.c() + c) * s.plane();
            for i in off..off + s.plane() {
                gi.data_mut()[i] = k * grad_out.data()[i];
            }
        }
    }
    gi
}
