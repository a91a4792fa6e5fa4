//! Weight and activation binarization with straight-through gradients.
//!
//! Weights binarize to `E · sign(W)` where `E` is the mean absolute value of
//! the latent weights (per filter by default). Activations binarize to
//! `sign(A)`; their backward pass uses the piecewise polynomial surrogate
//! `2 + 2A` on `(-1, 0)`, `2 - 2A` on `[0, 1)` and zero elsewhere.
//!
//! `sign(0)` is `+1` everywhere, including the bit-packed kernels.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bitkernel::PackedFilters;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BinarizeError {
    #[error("cannot binarize an empty tensor")]
    Empty,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
}

/// Granularity of the weight scale factor `E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// One scale per output filter.
    #[default]
    PerFilter,
    /// One scale for the whole layer.
    PerLayer,
}

#[inline]
pub fn sign(x: f32) -> f32 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Surrogate derivative of `sign` at `a`.
#[inline]
pub fn sign_grad(a: f32) -> f32 {
    if -1.0 < a && a < 0.0 {
        2.0 + 2.0 * a
    } else if (0.0..1.0).contains(&a) {
        2.0 - 2.0 * a
    } else {
        0.0
    }
}

/// Scale factors `E`, one entry per output filter (axis 0) regardless of mode.
pub fn weight_scales(weights: &Tensor, mode: ScaleMode) -> Result<Vec<f32>, BinarizeError> {
    if weights.is_empty() {
        return Err(BinarizeError::Empty);
    }
    let filters = weights.shape().n();
    let per = weights.shape().item_len();
    let mean_abs = |xs: &[f32]| (xs.iter().map(|x| x.abs() as f64).sum::<f64>() / xs.len() as f64) as f32;
    Ok(match mode {
        ScaleMode::PerFilter => (0..filters).map(|o| mean_abs(&weights.data()[o * per..(o + 1) * per])).collect(),
        ScaleMode::PerLayer => alloc::vec![mean_abs(weights.data()); filters],
    })
}

/// Returns `(W_b, E)` with `W_b[o, ..] = E[o] · sign(W[o, ..])`.
pub fn binarize_weights(weights: &Tensor, mode: ScaleMode) -> Result<(Tensor, Vec<f32>), BinarizeError> {
    let scale = weight_scales(weights, mode)?;
    let per = weights.shape().item_len();
    let wb = Tensor::from_fn(weights.shape(), |i| scale[i / per] * sign(weights.data()[i]));
    Ok((wb, scale))
}

/// `∂L/∂W ≈ E · ∂L/∂W_b`, broadcast per filter.
pub fn weight_grad_ste(upstream: &Tensor, scale: &[f32]) -> Result<Tensor, BinarizeError> {
    if upstream.shape().n() != scale.len() {
        return Err(BinarizeError::ShapeMismatch("upstream filters differ from scale length"));
    }
    let per = upstream.shape().item_len();
    Ok(Tensor::from_fn(upstream.shape(), |i| scale[i / per] * upstream.data()[i]))
}

pub fn binarize_activations(a: &Tensor) -> Tensor {
    a.map(sign)
}

/// `upstream · g(A)` element-wise.
pub fn activation_grad_piecewise(a: &Tensor, upstream: &Tensor) -> Result<Tensor, BinarizeError> {
    if a.shape() != upstream.shape() {
        return Err(BinarizeError::ShapeMismatch("activation and upstream shapes differ"));
    }
    Ok(a.zip_map(upstream, |x, g| g * sign_grad(x)))
}

/// Latent weights of a binary convolution plus their derived quantities.
///
/// `scale` and the packed bit planes are functions of `latent`; every
/// mutation goes through [`BinConvParams::set_latent`] so they never drift.
#[derive(Debug, Clone)]
pub struct BinConvParams {
    latent: Tensor,
    scale: Vec<f32>,
    mode: ScaleMode,
    packed: Option<PackedFilters>,
}

impl BinConvParams {
    pub fn new(latent: Tensor, mode: ScaleMode) -> Result<Self, BinarizeError> {
        let scale = weight_scales(&latent, mode)?;
        Ok(BinConvParams { latent, scale, mode, packed: None })
    }

    pub fn latent(&self) -> &Tensor {
        &self.latent
    }

    pub fn scale(&self) -> &[f32] {
        &self.scale
    }

    pub fn mode(&self) -> ScaleMode {
        self.mode
    }

    pub fn packed(&self) -> Option<&PackedFilters> {
        self.packed.as_ref()
    }

    pub fn set_latent(&mut self, latent: Tensor) -> Result<(), BinarizeError> {
        if latent.shape() != self.latent.shape() {
            return Err(BinarizeError::ShapeMismatch("latent weight shape changed"));
        }
        self.scale = weight_scales(&latent, self.mode)?;
        self.latent = latent;
        self.packed = None;
        Ok(())
    }

    /// Builds (or rebuilds) the bit-plane cache used by the packed kernel.
    pub fn pack(&mut self) -> &PackedFilters {
        self.packed.insert(PackedFilters::from_weights(&self.latent))
    }

    /// `E · sign(W)` as a float tensor.
    pub fn binarized(&self) -> Tensor {
        let per = self.latent.shape().item_len();
        Tensor::from_fn(self.latent.shape(), |i| self.scale[i / per] * sign(self.latent.data()[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use alloc::vec;

    fn filter(values: Vec<f32>) -> Tensor {
        let n = values.len();
        Tensor::from_vec(Shape::new(1, n, 1, 1), values).unwrap()
    }

    #[test]
    fn binarize_weights_examples() {
        let (wb, e) = binarize_weights(&filter(vec![0.5, -0.3, 0.1, -0.1]), ScaleMode::PerFilter).unwrap();
        assert_eq!(e, vec![0.25]);
        assert_eq!(wb.data(), &[0.25, -0.25, 0.25, -0.25]);

        let (wb, e) = binarize_weights(&filter(vec![0.0; 4]), ScaleMode::PerFilter).unwrap();
        assert_eq!(e, vec![0.0]);
        assert!(wb.data().iter().all(|&x| x == 0.0));

        let (wb, e) = binarize_weights(&filter(vec![1.0, -1.0]), ScaleMode::PerFilter).unwrap();
        assert_eq!(e, vec![1.0]);
        assert_eq!(wb.data(), &[1.0, -1.0]);
    }

    #[test]
    fn empty_weights_rejected() {
        let empty = Tensor::zeros(Shape::new(0, 3, 3, 3));
        assert_eq!(binarize_weights(&empty, ScaleMode::PerFilter).unwrap_err(), BinarizeError::Empty);
    }

    #[test]
    fn per_layer_mode_shares_one_scale() {
        let w = Tensor::from_vec(Shape::new(2, 2, 1, 1), vec![1.0, -1.0, 0.5, 0.5]).unwrap();
        assert_eq!(weight_scales(&w, ScaleMode::PerLayer).unwrap(), vec![0.75, 0.75]);
        assert_eq!(weight_scales(&w, ScaleMode::PerFilter).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn weight_ste_examples() {
        let ones = Tensor::full(Shape::new(1, 4, 1, 1), 1.0);
        assert!(weight_grad_ste(&ones, &[0.25]).unwrap().data().iter().all(|&x| x == 0.25));
        let zeros = Tensor::zeros(Shape::new(1, 4, 1, 1));
        assert!(weight_grad_ste(&zeros, &[0.25]).unwrap().data().iter().all(|&x| x == 0.0));
        assert!(weight_grad_ste(&zeros, &[0.25, 1.0]).is_err());
    }

    #[test]
    fn activation_sign_tie_rule() {
        let a = filter(vec![-0.7, 0.0, 0.3]);
        assert_eq!(binarize_activations(&a).data(), &[-1.0, 1.0, 1.0]);
    }

    #[test]
    fn piecewise_gradient_branches() {
        assert_eq!(sign_grad(-0.5), 1.0);
        assert_eq!(sign_grad(0.25), 1.5);
        assert_eq!(sign_grad(2.0), 0.0);
        assert_eq!(sign_grad(0.0), 2.0);
        assert_eq!(sign_grad(-1.0), 0.0);
        assert_eq!(sign_grad(1.0), 0.0);
        let a = filter(vec![-0.5, 0.25]);
        let up = filter(vec![2.0, 2.0]);
        assert_eq!(activation_grad_piecewise(&a, &up).unwrap().data(), &[2.0, 3.0]);
        assert!(activation_grad_piecewise(&a, &filter(vec![1.0])).is_err());
    }

    #[test]
    fn set_latent_refreshes_scale_and_drops_cache() {
        let mut p = BinConvParams::new(filter(vec![1.0, -1.0]), ScaleMode::PerFilter).unwrap();
        p.pack();
        assert!(p.packed().is_some());
        p.set_latent(filter(vec![3.0, -1.0])).unwrap();
        assert_eq!(p.scale(), &[2.0]);
        assert!(p.packed().is_none());
        assert_eq!(p.binarized().data(), &[2.0, -2.0]);
    }
}
