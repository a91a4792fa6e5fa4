//! Storage and compute cost of a graph.
//!
//! Storage is `32 · float_params + binary_params` bits. Compute is
//! `float_mults + binary_mults / 64`: XNOR-popcount processes 64 binary
//! multiplications per word operation. Only convolution and linear
//! multiplications are counted.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::arch::{assemble_network, ArchError, ArchSpec};
use crate::graph::{Graph, NodeId, Op, ParamInit, Precision, Region};

/// Which optional contributions are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountPolicy {
    /// Batch-norm scale, shift and running statistics as float parameters.
    pub include_norm: bool,
    /// Convolution and linear biases as float parameters.
    pub include_bias: bool,
    /// Full-precision convolutions in transition regions, in the Flops total.
    pub include_downsample: bool,
}

impl Default for CountPolicy {
    fn default() -> Self {
        CountPolicy { include_norm: false, include_bias: false, include_downsample: true }
    }
}

impl CountPolicy {
    /// Every parameter tensor the graph stores.
    pub fn everything() -> Self {
        CountPolicy { include_norm: true, include_bias: true, include_downsample: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub node: NodeId,
    pub name: String,
    pub kind: String,
    pub precision: Precision,
    pub region: Region,
    /// `(C, H, W)` of the layer output.
    pub output: [usize; 3],
    pub params: u64,
    pub mults: u64,
}

impl LayerCost {
    pub fn param_bits(&self) -> u64 {
        match self.precision {
            Precision::Full => 32 * self.params,
            Precision::Binary => self.params,
        }
    }

    pub fn flops(&self) -> f64 {
        match self.precision {
            Precision::Full => self.mults as f64,
            Precision::Binary => self.mults as f64 / 64.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub float_params: u64,
    pub binary_params: u64,
    pub float_mults: u64,
    pub binary_mults: u64,
    pub policy: CountPolicy,
    pub layers: Vec<LayerCost>,
}

impl ComplexityReport {
    pub fn param_bits(&self) -> u64 {
        32 * self.float_params + self.binary_params
    }

    pub fn mbit(&self) -> f64 {
        self.param_bits() as f64 / 1e6
    }

    pub fn flops(&self) -> f64 {
        self.float_mults as f64 + self.binary_mults as f64 / 64.0
    }

    /// Totals grouped by stage region in graph order.
    pub fn by_region(&self) -> Vec<(Region, u64, f64)> {
        let mut out: Vec<(Region, u64, f64)> = Vec::new();
        for l in &self.layers {
            let key = match l.region {
                Region::Block { stage, .. } => Region::Block { stage, index: 0 },
                r => r,
            };
            match out.iter_mut().find(|(r, _, _)| *r == key) {
                Some(e) => {
                    e.1 += l.param_bits();
                    e.2 += l.flops();
                }
                None => out.push((key, l.param_bits(), l.flops())),
            }
        }
        out
    }
}

/// Costs every convolution, linear and (per policy) batch-norm node.
pub fn analyze(graph: &Graph, policy: CountPolicy) -> ComplexityReport {
    let mut layers = Vec::new();
    for id in graph.ids() {
        let node = graph.node(id);
        let out = graph.item_shape(id);
        let (params, mults, counted_mults) = match node.op {
            Op::Conv2d(c) | Op::BinConv2d { conv: c, .. } => {
                let weights = (c.out_ch * c.in_ch * c.kernel * c.kernel) as u64;
                let bias = if c.bias && policy.include_bias { c.out_ch as u64 } else { 0 };
                let mults = weights * (out[1] * out[2]) as u64;
                let downsample =
                    matches!(node.region, Region::Transition { .. }) && node.op.precision() == Precision::Full;
                (weights + bias, mults, policy.include_downsample || !downsample)
            }
            Op::Linear { in_features, out_features, bias } => {
                let w = (in_features * out_features) as u64;
                let b = if bias && policy.include_bias { out_features as u64 } else { 0 };
                (w + b, w, true)
            }
            Op::BatchNorm { channels, .. } if policy.include_norm => (4 * channels as u64, 0, true),
            _ => continue,
        };
        layers.push(LayerCost {
            node: id,
            name: node.name.clone(),
            kind: node.op.name().into(),
            precision: node.op.precision(),
            region: node.region,
            output: out,
            params,
            mults: if counted_mults { mults } else { 0 },
        });
    }
    let sum = |p: Precision, f: fn(&LayerCost) -> u64| layers.iter().filter(|l| l.precision == p).map(f).sum();
    ComplexityReport {
        float_params: sum(Precision::Full, |l| l.params),
        binary_params: sum(Precision::Binary, |l| l.params),
        float_mults: sum(Precision::Full, |l| l.mults),
        binary_mults: sum(Precision::Binary, |l| l.mults),
        policy,
        layers,
    }
}

pub fn analyze_arch(arch: &ArchSpec, policy: CountPolicy) -> Result<ComplexityReport, ArchError> {
    Ok(analyze(&assemble_network(arch, ParamInit::Zeros)?, policy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMetric {
    Flops,
    ParamBits,
    /// Both metrics within budget.
    Both,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ComplexityError {
    #[error("no width >= {min} fits the budget")]
    NoFeasibleWidth { min: usize },
    #[error(transparent)]
    Arch(#[from] ArchError),
}

pub const MIN_SCALED_WIDTH: usize = 8;

/// Largest width (base channels or growth) whose cost fits `reference`.
pub fn scale_channels(
    arch: &ArchSpec,
    reference: &ComplexityReport,
    metric: BudgetMetric,
) -> Result<ArchSpec, ComplexityError> {
    let fits = |w: usize| -> Result<bool, ComplexityError> {
        let r = analyze_arch(&arch.with_width(w), reference.policy)?;
        let bits = r.param_bits() <= reference.param_bits();
        let flops = r.flops() <= reference.flops();
        Ok(match metric {
            BudgetMetric::Flops => flops,
            BudgetMetric::ParamBits => bits,
            BudgetMetric::Both => bits && flops,
        })
    };
    let mut lo = MIN_SCALED_WIDTH;
    if !fits(lo)? {
        return Err(ComplexityError::NoFeasibleWidth { min: MIN_SCALED_WIDTH });
    }
    let mut hi = lo * 2;
    while fits(hi)? {
        lo = hi;
        hi *= 2;
    }
    // Invariant: fits(lo), !fits(hi).
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(arch.with_width(lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binarize::ScaleMode;
    use crate::graph::GraphBuilder;

    fn one_conv(binary: bool) -> ComplexityReport {
        let mut b = GraphBuilder::new(ParamInit::Zeros);
        let x = b.input("x", 16, 8, 8).unwrap();
        let c = if binary {
            b.bin_conv("c", x, 16, 3, 1, 1, ScaleMode::PerFilter).unwrap()
        } else {
            b.conv("c", x, 16, 3, 1, 1).unwrap()
        };
        analyze(&b.finish(c, None), CountPolicy::default())
    }

    #[test]
    fn single_conv_costs() {
        let bin = one_conv(true);
        assert_eq!((bin.binary_params, bin.param_bits()), (2304, 2304));
        assert_eq!(bin.flops(), 2304.0);
        let fp = one_conv(false);
        assert_eq!(fp.param_bits(), 73728);
        assert_eq!(fp.float_mults, 147456);
        assert_eq!(fp.flops(), 64.0 * bin.flops());
        assert_eq!(fp.param_bits(), 32 * bin.param_bits());
    }

    #[test]
    fn totals_decompose() {
        let r = analyze_arch(&crate::arch::toy_rf(8, 10), CountPolicy::everything()).unwrap();
        let bits: u64 = r.layers.iter().map(LayerCost::param_bits).sum();
        let flops: f64 = r.layers.iter().map(LayerCost::flops).sum();
        assert_eq!(bits, r.param_bits());
        assert!((flops - r.flops()).abs() <= 1e-6 * r.flops());
    }
}
