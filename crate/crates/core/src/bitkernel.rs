//! Bit-packed binary convolution: sign packing, XNOR-popcount dot products
//! and an im2col-style convolution over 64-bit words.
//!
//! Bit `1` encodes `+1` and bit `0` encodes `-1`. Zero padding has no ±1
//! encoding, so every patch carries a validity mask and the dot product is
//! `2·popcount(xnor ∧ mask) − popcount(mask)`; padded taps contribute 0.

use alloc::vec;
use alloc::vec::Vec;

use crate::binarize::{sign, BinConvParams};
use crate::ops::{conv2d_forward, ConvGeom};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KernelError {
    #[error("bit plane lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("input has {input} channels but filters expect {filters}")]
    ChannelMismatch { input: usize, filters: usize },
    #[error("kernel {kernel} with padding {padding} does not fit a {h}x{w} input")]
    Geometry { kernel: usize, padding: usize, h: usize, w: usize },
    #[error("binary convolution parameters have no packed bit planes; call pack() first")]
    NotPacked,
}

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

/// Sign bits of `len` logical elements; pad bits past `len` stay zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlane {
    len: usize,
    words: Vec<u64>,
}

impl BitPlane {
    pub fn zeros(len: usize) -> Self {
        BitPlane { len, words: vec![0; words_for(len)] }
    }

    pub fn from_signs(values: &[f32]) -> Self {
        let mut words = vec![0u64; words_for(values.len())];
        for (chunk, word) in values.chunks(64).zip(words.iter_mut()) {
            for (bit, &v) in chunk.iter().enumerate() {
                *word |= ((v >= 0.0) as u64) << bit;
            }
        }
        BitPlane { len: values.len(), words }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, positive: bool) {
        debug_assert!(i < self.len);
        let bit = 1u64 << (i % 64);
        if positive {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    /// Decodes to `±1.0`.
    pub fn unpack(&self) -> Vec<f32> {
        (0..self.len).map(|i| if self.get(i) { 1.0 } else { -1.0 }).collect()
    }

    pub fn hamming_distance(&self, other: &BitPlane) -> Result<u32, KernelError> {
        if self.len != other.len {
            return Err(KernelError::LengthMismatch(self.len, other.len));
        }
        Ok(self.words.iter().zip(&other.words).map(|(a, b)| (a ^ b).count_ones()).sum())
    }
}

/// Sign-packs every element of `t` in row-major order.
pub fn pack_signs(t: &Tensor) -> BitPlane {
    BitPlane::from_signs(t.data())
}

/// Integer dot product of two ±1 vectors.
pub fn xnor_popcount_dot(a: &BitPlane, b: &BitPlane) -> Result<i64, KernelError> {
    if a.len != b.len {
        return Err(KernelError::LengthMismatch(a.len, b.len));
    }
    let full = a.len / 64;
    let mut agree: u64 =
        a.words[..full].iter().zip(&b.words[..full]).map(|(x, y)| (!(x ^ y)).count_ones() as u64).sum();
    let rem = a.len % 64;
    if rem != 0 {
        let mask = (1u64 << rem) - 1;
        agree += (!(a.words[full] ^ b.words[full]) & mask).count_ones() as u64;
    }
    Ok(2 * agree as i64 - a.len as i64)
}

#[inline]
fn masked_agreements(a: &[u64], b: &[u64], mask: &[u64]) -> u32 {
    a.iter().zip(b).zip(mask).map(|((x, y), m)| (!(x ^ y) & m).count_ones()).sum()
}

/// `len <= 32` bits of `row` starting at bit `start`, in the low bits.
#[inline]
fn window(row: &[u64], start: usize, len: usize) -> u64 {
    let (w, off) = (start / 64, start % 64);
    let mut bits = row[w] >> off;
    if off + len > 64 {
        bits |= row[w + 1] << (64 - off);
    }
    bits & ((1u64 << len) - 1)
}

/// Filter sign bits laid out `(c, ky, kx)` per filter, one word-aligned row each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedFilters {
    out_ch: usize,
    in_ch: usize,
    kernel: usize,
    words_per_filter: usize,
    words: Vec<u64>,
}

impl PackedFilters {
    pub fn from_weights(weights: &Tensor) -> Self {
        let s = weights.shape();
        let patch = s.item_len();
        let wpf = words_for(patch);
        let mut words = Vec::with_capacity(s.n() * wpf);
        for o in 0..s.n() {
            words.extend_from_slice(BitPlane::from_signs(weights.item(o)).words());
        }
        PackedFilters { out_ch: s.n(), in_ch: s.c(), kernel: s.h(), words_per_filter: wpf, words }
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    /// Word operations per output dot product.
    pub fn words_per_dot(&self) -> usize {
        self.words_per_filter
    }

    fn filter(&self, o: usize) -> &[u64] {
        &self.words[o * self.words_per_filter..(o + 1) * self.words_per_filter]
    }
}

/// Sign bits of an activation tensor, kept with its shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedActivations {
    shape: Shape,
    bits: BitPlane,
}

impl PackedActivations {
    pub fn from_tensor(t: &Tensor) -> Self {
        PackedActivations { shape: t.shape(), bits: pack_signs(t) }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }
}

/// Binary convolution on packed operands.
///
/// Output `[n, o, y, x] = E[o] · Σ sign(input) · sign(W[o])` over the zero-padded
/// receptive field, bit-identical to [`binary_conv2d_float`].
pub fn binary_conv2d(
    input: &PackedActivations,
    params: &BinConvParams,
    stride: usize,
    padding: usize,
) -> Result<Tensor, KernelError> {
    let filters = params.packed().ok_or(KernelError::NotPacked)?;
    let s = input.shape;
    if s.c() != filters.in_ch {
        return Err(KernelError::ChannelMismatch { input: s.c(), filters: filters.in_ch });
    }
    let k = filters.kernel;
    let g = ConvGeom::new(s.c(), filters.out_ch, k, stride, padding, s.h(), s.w()).ok_or(KernelError::Geometry {
        kernel: k,
        padding,
        h: s.h(),
        w: s.w(),
    })?;
    let wpf = filters.words_per_filter;
    let plane = g.out_plane();
    let (in_h, in_w) = (g.in_h as isize, g.in_w as isize);
    let origin = |o: usize| (o * stride) as isize - padding as isize;

    // Validity masks and their popcounts depend only on the output position.
    // Interior windows use every tap; only border windows need a bit loop.
    let patch_len = g.patch_len();
    let full: Vec<u64> =
        (0..wpf).map(|w| if (w + 1) * 64 <= patch_len { !0 } else { (1u64 << (patch_len % 64)) - 1 }).collect();
    let inside = |o: usize, extent: isize| origin(o) >= 0 && origin(o) + k as isize <= extent;
    let mut masks = vec![0u64; plane * wpf];
    let mut valid = vec![0i32; plane];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let p = oy * g.out_w + ox;
            let row = &mut masks[p * wpf..(p + 1) * wpf];
            if inside(oy, in_h) && inside(ox, in_w) {
                row.copy_from_slice(&full);
                valid[p] = patch_len as i32;
                continue;
            }
            for c in 0..g.in_ch {
                for ky in 0..k {
                    let y = origin(oy) + ky as isize;
                    for kx in 0..k {
                        let x = origin(ox) + kx as isize;
                        if (0..in_h).contains(&y) && (0..in_w).contains(&x) {
                            let j = (c * k + ky) * k + kx;
                            row[j / 64] |= 1 << (j % 64);
                        }
                    }
                }
            }
            valid[p] = row.iter().map(|m| m.count_ones() as i32).sum();
        }
    }

    // Sign bits of each input row, shifted right by `padding` so a window
    // starts at bit `ox * stride`. Pad bits stay 0; the mask excludes them.
    let row_words = words_for(g.in_w + 2 * padding + 64);
    let mut rows = vec![0u64; g.in_ch * g.in_h * row_words];
    let scale = params.scale();
    let item_len = s.item_len();
    let mut out = Tensor::zeros(Shape::new(s.n(), g.out_ch, g.out_h, g.out_w));
    let mut patch = vec![0u64; wpf];
    for b in 0..s.n() {
        rows.iter_mut().for_each(|w| *w = 0);
        for r in 0..g.in_ch * g.in_h {
            let row = &mut rows[r * row_words..(r + 1) * row_words];
            for x in 0..g.in_w {
                let bit = x + padding;
                row[bit / 64] |= (input.bits.get(b * item_len + r * g.in_w + x) as u64) << (bit % 64);
            }
        }
        let dst = out.item_mut(b);
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let p = oy * g.out_w + ox;
                patch.iter_mut().for_each(|w| *w = 0);
                let x0 = ox * stride;
                let mut j = 0;
                for c in 0..g.in_ch {
                    for ky in 0..k {
                        let y = origin(oy) + ky as isize;
                        if (0..in_h).contains(&y) {
                            let row = &rows[(c * g.in_h + y as usize) * row_words..];
                            let mut done = 0;
                            while done < k {
                                let len = (k - done).min(32);
                                let bits = window(row, x0 + done, len);
                                let at = j + done;
                                patch[at / 64] |= bits << (at % 64);
                                if at % 64 + len > 64 {
                                    patch[at / 64 + 1] |= bits >> (64 - at % 64);
                                }
                                done += len;
                            }
                        }
                        j += k;
                    }
                }
                let mask = &masks[p * wpf..(p + 1) * wpf];
                for o in 0..g.out_ch {
                    let agree = masked_agreements(filters.filter(o), &patch, mask) as i32;
                    dst[o * plane + p] = scale[o] * (2 * agree - valid[p]) as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Float realization: `E[o] · conv(sign(input), sign(W[o]))`.
///
/// Sums of ±1 terms are exact in `f32` for any realistic patch size, so this
/// path and the packed kernel agree bit for bit.
pub fn binary_conv2d_float(
    input: &Tensor,
    params: &BinConvParams,
    stride: usize,
    padding: usize,
) -> Result<Tensor, KernelError> {
    let w = params.latent();
    let s = input.shape();
    if s.c() != w.shape().c() {
        return Err(KernelError::ChannelMismatch { input: s.c(), filters: w.shape().c() });
    }
    let k = w.shape().h();
    let g = ConvGeom::new(s.c(), w.shape().n(), k, stride, padding, s.h(), s.w()).ok_or(KernelError::Geometry {
        kernel: k,
        padding,
        h: s.h(),
        w: s.w(),
    })?;
    let signs: Vec<f32> = w.data().iter().map(|&x| sign(x)).collect();
    let mut out = conv2d_forward(&g, &input.map(sign), &signs);
    scale_channels(&mut out, params.scale());
    Ok(out)
}

pub(crate) fn scale_channels(t: &mut Tensor, scale: &[f32]) {
    let s = t.shape();
    let plane = s.plane();
    for (i, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
        let e = scale[i % s.c()];
        chunk.iter_mut().for_each(|v| *v *= e);
    }
}
