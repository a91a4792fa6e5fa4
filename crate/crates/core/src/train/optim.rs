use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::graph::Param;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("optimizer shape mismatch: {params} parameters, {grads} gradients, {state} state entries")]
pub struct OptimShapeError {
    pub params: usize,
    pub grads: usize,
    pub state: usize,
}

/// `v ← μ·v + g + wd·w`, then `w ← w − lr·v`.
pub fn sgd_momentum_step(
    w: &mut [f32],
    g: &[f32],
    v: &mut [f32],
    lr: f32,
    momentum: f32,
    weight_decay: f32,
) -> Result<(), OptimShapeError> {
    if w.len() != g.len() || w.len() != v.len() {
        return Err(OptimShapeError { params: w.len(), grads: g.len(), state: v.len() });
    }
    for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *vi = momentum * *vi + gi + weight_decay * *wi;
        *wi -= lr * *vi;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// One bias-corrected Adam update; `t` is the 1-based step count.
pub fn adam_step(
    w: &mut [f32],
    g: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    lr: f32,
    h: AdamHyper,
) -> Result<(), OptimShapeError> {
    if w.len() != g.len() || w.len() != m.len() || w.len() != v.len() {
        return Err(OptimShapeError { params: w.len(), grads: g.len(), state: m.len().min(v.len()) });
    }
    let c1 = 1.0 - libm::pow(h.beta1 as f64, t as f64);
    let c2 = 1.0 - libm::pow(h.beta2 as f64, t as f64);
    for i in 0..w.len() {
        let gi = g[i] + h.weight_decay * w[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
        let m_hat = m[i] as f64 / c1;
        let v_hat = v[i] as f64 / c2;
        w[i] -= (lr as f64 * m_hat / (libm::sqrt(v_hat) + h.eps as f64)) as f32;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    SgdMomentum {
        momentum: f32,
        weight_decay: f32,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f32,
        #[serde(default = "default_beta2")]
        beta2: f32,
        #[serde(default = "default_eps")]
        eps: f32,
        #[serde(default)]
        weight_decay: f32,
    },
}

fn default_beta1() -> f32 {
    0.9
}
fn default_beta2() -> f32 {
    0.999
}
fn default_eps() -> f32 {
    1e-8
}

/// Per-parameter optimizer slots, indexed like [`crate::graph::Graph::params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    /// Momentum buffer (SGD) or first moment (Adam).
    pub first: Vec<Vec<f32>>,
    /// Second moment (Adam); empty for SGD.
    pub second: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(config: &OptimizerConfig, params: &[Param]) -> Self {
        let zeros = || params.iter().map(|p| alloc::vec![0.0; p.value.numel()]).collect::<Vec<_>>();
        let second = match config {
            OptimizerConfig::Adam { .. } => zeros(),
            OptimizerConfig::SgdMomentum { .. } => Vec::new(),
        };
        OptimizerState { step: 0, first: zeros(), second }
    }

    /// Updates every trainable parameter that received a gradient.
    pub fn apply(
        &mut self,
        config: &OptimizerConfig,
        params: &mut [Param],
        grads: &[Option<Tensor>],
        lr: f32,
    ) -> Result<(), OptimShapeError> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(OptimShapeError { params: params.len(), grads: grads.len(), state: self.first.len() });
        }
        self.step += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if !p.trainable {
                continue;
            }
            match *config {
                OptimizerConfig::SgdMomentum { momentum, weight_decay } => {
                    sgd_momentum_step(p.value.data_mut(), g.data(), &mut self.first[i], lr, momentum, weight_decay)?
                }
                OptimizerConfig::Adam { beta1, beta2, eps, weight_decay } => adam_step(
                    p.value.data_mut(),
                    g.data(),
                    &mut self.first[i],
                    &mut self.second[i],
                    self.step,
                    lr,
                    AdamHyper { beta1, beta2, eps, weight_decay },
                )?,
            }
        }
        Ok(())
    }
}
