//! Declarative network descriptions, their names, and graph generators.

mod assemble;
mod fractal;
mod name;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::binarize::ScaleMode;
use crate::graph::GraphError;

pub use assemble::{assemble_network, assemble_training_network, count_depth, TrainingNetwork};
pub use fractal::{
    build_dense_fractal_block, build_fractal, build_residual_fractal, BlockGraph, FractalSpec, ShortcutMode,
};
pub use name::{format_arch_name, parse_arch_name};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Plain fractal blocks.
    F,
    /// Fractal blocks with a residual shortcut around every convolution.
    RF,
    /// Dense fractal blocks without residuals.
    DF,
    /// Dense fractal blocks with residuals on channel-preserving convolutions.
    DRF,
    BiReal,
    BinaryDenseNet,
}

impl Family {
    pub fn is_dense(self) -> bool {
        matches!(self, Family::DF | Family::DRF | Family::BinaryDenseNet)
    }

    pub fn is_fractal(self) -> bool {
        matches!(self, Family::F | Family::RF | Family::DF | Family::DRF)
    }

    pub fn has_residuals(self) -> bool {
        matches!(self, Family::RF | Family::DRF | Family::BiReal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    /// 7×7/2 convolution and 3×3/2 max pool stem.
    Imagenet,
    /// Single 3×3 convolution stem.
    Cifar,
}

impl Dataset {
    pub fn default_classes(self) -> usize {
        match self {
            Dataset::Imagenet => 1000,
            Dataset::Cifar => 100,
        }
    }

    pub fn default_resolution(self) -> usize {
        match self {
            Dataset::Imagenet => 224,
            Dataset::Cifar => 32,
        }
    }
}

/// How convolutions inside blocks are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockPrecision {
    /// `Sign → BinConv → BN`.
    #[default]
    Binary,
    /// `Tanh → Conv → ReLU → BN` (dense families omit the ReLU).
    Full,
}

/// Output width of each dense transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionPlan {
    /// Halve resolution and double channels (residual families).
    Double,
    /// `floor(C / r)` for the current channel count `C`.
    Reduction(Vec<f64>),
    /// Widths of a reference dense net with the same stage layout, stem width
    /// and the given growth, compressed by the given factors.
    Skeleton { stem: usize, growth: usize, reductions: Vec<f64> },
    /// Explicit output widths.
    Widths(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub family: Family,
    /// Fractal columns `c`; 1 for the baselines.
    pub columns: usize,
    /// Blocks per stage; layers per stage for BinaryDenseNet.
    pub stage_blocks: Vec<usize>,
    /// Base channels (residual families) or growth rate (dense families).
    pub width: usize,
    pub dataset: Dataset,
    pub num_classes: usize,
    pub input_resolution: usize,
    /// Stem output channels for dense families.
    pub stem_channels: usize,
    pub transition: TransitionPlan,
    #[serde(default)]
    pub precision: BlockPrecision,
    #[serde(default)]
    pub scale_mode: ScaleMode,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ArchError {
    #[error("malformed architecture name '{name}'; expected e.g. 'RF-c4d8 ResNet37(41)', 'DRF-c2d2 DenseNet51(53)', 'Bi-Real ResNet18(64)' or 'BinaryDenseNet51(32)'")]
    Malformed { name: String },
    #[error("c{columns}d{longest} is inconsistent: a block with {columns} columns has longest path {expected}")]
    InconsistentColumns { columns: usize, longest: usize, expected: usize },
    #[error("no layout for depth {depth}: {detail}")]
    UnsupportedDepth { depth: usize, detail: String },
    #[error("generated graph has depth {actual}, spec requires {expected}")]
    DepthMismatch { expected: usize, actual: usize },
    #[error("family {0:?} has no residual connections to strip")]
    NoResiduals(Family),
    #[error("residual requires equal channels, got {in_ch} -> {out_ch}")]
    ResidualShape { in_ch: usize, out_ch: usize },
    #[error("invalid spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Longest-path convolution count of a `c`-column fractal block.
pub fn fractal_depth(columns: usize) -> usize {
    1 << (columns - 1)
}

/// Total convolutions in a `c`-column fractal block.
pub fn fractal_convs(columns: usize) -> usize {
    (1 << columns) - 1
}

/// Splits `total` blocks over four stages; leftovers go to stages 3, 2, 4, 1.
pub fn default_stage_blocks(total: usize) -> Vec<usize> {
    let mut v = vec![total / 4; 4];
    for &s in [2usize, 1, 3, 0].iter().take(total % 4) {
        v[s] += 1;
    }
    v
}

impl ArchSpec {
    /// Residual-family network with the given stage layout.
    pub fn resnet(family: Family, columns: usize, stage_blocks: Vec<usize>, width: usize, dataset: Dataset) -> Self {
        ArchSpec {
            family,
            columns,
            stage_blocks,
            width,
            dataset,
            num_classes: dataset.default_classes(),
            input_resolution: dataset.default_resolution(),
            stem_channels: width,
            transition: TransitionPlan::Double,
            precision: BlockPrecision::Binary,
            scale_mode: ScaleMode::PerFilter,
        }
    }

    /// Dense-family network with the given stage layout and transitions.
    pub fn densenet(
        family: Family,
        columns: usize,
        stage_blocks: Vec<usize>,
        growth: usize,
        dataset: Dataset,
        transition: TransitionPlan,
    ) -> Self {
        ArchSpec {
            family,
            columns,
            stage_blocks,
            width: growth,
            dataset,
            num_classes: dataset.default_classes(),
            input_resolution: dataset.default_resolution(),
            stem_channels: 64,
            transition,
            precision: BlockPrecision::Binary,
            scale_mode: ScaleMode::PerFilter,
        }
    }

    /// Depth under the rule that every convolution on the longest path, and
    /// the classifier, counts as one layer.
    pub fn depth(&self) -> usize {
        let blocks: usize = self.stage_blocks.iter().sum();
        let transitions = self.stage_blocks.len().saturating_sub(1);
        match self.family {
            Family::BiReal => 1 + 2 * blocks + 1,
            Family::BinaryDenseNet => 1 + blocks + transitions + 1,
            _ => 1 + blocks * fractal_depth(self.columns) + transitions + 1,
        }
    }

    pub fn name(&self) -> String {
        format_arch_name(self)
    }

    /// Same spec with a different width, keeping a residual family's stem in step.
    pub fn with_width(&self, width: usize) -> Self {
        let mut s = self.clone();
        if !self.family.is_dense() {
            s.stem_channels = width;
        }
        s.width = width;
        s
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let bad = |m: &str| Err(ArchError::Invalid(m.into()));
        if self.columns == 0 || self.columns > 16 {
            return bad("columns must be in 1..=16");
        }
        if !self.family.is_fractal() && self.columns != 1 {
            return bad("baseline families have one column");
        }
        if self.stage_blocks.is_empty() || self.stage_blocks.contains(&0) {
            return bad("every stage needs at least one block");
        }
        if self.width == 0 || self.stem_channels == 0 || self.num_classes == 0 {
            return bad("widths and class count must be positive");
        }
        if self.input_resolution >> (self.stage_blocks.len() - 1) == 0 {
            return bad("input resolution too small for the number of stages");
        }
        let transitions = self.stage_blocks.len() - 1;
        match &self.transition {
            TransitionPlan::Double => {
                if self.family.is_dense() {
                    return bad("dense families need a compressing transition plan");
                }
            }
            TransitionPlan::Reduction(r) | TransitionPlan::Skeleton { reductions: r, .. } => {
                if r.len() != transitions || r.iter().any(|&f| f.is_nan() || f < 1.0) {
                    return bad("one reduction factor >= 1 per transition");
                }
            }
            TransitionPlan::Widths(w) => {
                if w.len() != transitions || w.contains(&0) {
                    return bad("one positive width per transition");
                }
            }
        }
        Ok(())
    }
}

/// Ablation transform: RF → F, DRF → DF.
pub fn strip_residuals(arch: &ArchSpec) -> Result<ArchSpec, ArchError> {
    let family = match arch.family {
        Family::RF => Family::F,
        Family::DRF => Family::DF,
        other => return Err(ArchError::NoResiduals(other)),
    };
    Ok(ArchSpec { family, ..arch.clone() })
}

/// Every architecture that appears in the ImageNet and CIFAR-100 tables.
pub fn table_presets() -> Vec<(Dataset, &'static str)> {
    use Dataset::*;
    vec![
        (Imagenet, "Bi-Real ResNet18(64)"),
        (Imagenet, "RF-c3d4 ResNet21(53)"),
        (Imagenet, "RF-c4d8 ResNet37(41)"),
        (Imagenet, "RF-c5d16 ResNet69(31)"),
        (Imagenet, "Bi-Real ResNet34(64)"),
        (Imagenet, "RF-c3d4 ResNet41(48)"),
        (Imagenet, "RF-c4d8 ResNet77(35)"),
        (Imagenet, "BinaryDenseNet51(32)"),
        (Imagenet, "DRF-c2d2 DenseNet51(53)"),
        (Imagenet, "BinaryDenseNet69(32)"),
        (Imagenet, "DRF-c2d2 DenseNet69(48)"),
        (Cifar, "Bi-Real ResNet18(64)"),
        (Cifar, "RF-c3d4 ResNet21(50)"),
        (Cifar, "RF-c4d8 ResNet37(36)"),
        (Cifar, "RF-c5d16 ResNet69(26)"),
        (Cifar, "Bi-Real ResNet34(64)"),
        (Cifar, "RF-c3d4 ResNet41(45)"),
        (Cifar, "RF-c4d8 ResNet77(32)"),
        (Cifar, "RF-c5d16 ResNet149(22)"),
        (Cifar, "BinaryDenseNet51(32)"),
        (Cifar, "DRF-c2d2 DenseNet51(48)"),
        (Cifar, "DRF-c3d4 DenseNet97(38)"),
        (Cifar, "BinaryDenseNet69(32)"),
        (Cifar, "DRF-c2d2 DenseNet69(44)"),
        (Cifar, "DRF-c3d4 DenseNet133(36)"),
    ]
}

/// Two-stage RF-c2d2 network for 32×32 inputs, small enough to train on a CPU.
pub fn toy_rf(width: usize, num_classes: usize) -> ArchSpec {
    let mut s = ArchSpec::resnet(Family::RF, 2, vec![1, 1], width, Dataset::Cifar);
    s.num_classes = num_classes;
    s
}
