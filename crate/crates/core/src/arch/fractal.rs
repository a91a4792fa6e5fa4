//! Fractal block generators.
//!
//! A block is expanded recursively: one column is a single unit, and `c + 1`
//! columns are the `c`-column block applied twice in sequence next to a
//! single unit on the block input. Neighbouring joins collapse, so the
//! expansion returns the list of column outputs and only the outermost level
//! joins them. A join with one input is omitted.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{ArchError, BlockPrecision};
use crate::binarize::ScaleMode;
use crate::graph::{Graph, GraphBuilder, NodeId, Op, ParamInit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShortcutMode {
    None,
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FractalSpec {
    pub columns: usize,
    pub shortcut: ShortcutMode,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd kernel size; padding keeps the resolution.
    pub kernel: usize,
    pub precision: BlockPrecision,
    /// Input height and width.
    pub resolution: usize,
}

impl FractalSpec {
    pub fn new(columns: usize, channels: usize, shortcut: ShortcutMode) -> Self {
        FractalSpec {
            columns,
            shortcut,
            in_channels: channels,
            out_channels: channels,
            kernel: 3,
            precision: BlockPrecision::Binary,
            resolution: 8,
        }
    }
}

/// A standalone block: one input node, one output node.
#[derive(Debug, Clone)]
pub struct BlockGraph {
    pub graph: Graph,
    pub input: NodeId,
    pub output: NodeId,
    /// Convolution nodes in creation order.
    pub convs: Vec<NodeId>,
    /// Convolutions wrapped by a residual `Add`.
    pub residual_convs: Vec<NodeId>,
}

impl BlockGraph {
    pub fn count(&self, pred: impl Fn(&Op) -> bool) -> usize {
        self.graph.nodes().iter().filter(|n| pred(&n.op)).count()
    }

    /// Longest chain of convolutions from input to output.
    pub fn longest_path(&self) -> usize {
        let g = &self.graph;
        let mut depth = alloc::vec![0usize; g.len()];
        for id in g.ids() {
            let node = g.node(id);
            let base = node.inputs.iter().map(|i| depth[i.0]).max().unwrap_or(0);
            depth[id.0] = base + usize::from(node.op.is_conv());
        }
        depth[self.output.0]
    }

    /// Number of inputs merged by the join at the block output (1 if none).
    pub fn output_join_fan_in(&self) -> usize {
        let mut out = self.output;
        if matches!(self.graph.node(out).op, Op::Concat) {
            out = self.graph.node(out).inputs[1];
        }
        match self.graph.node(out).op {
            Op::JoinMean => self.graph.node(out).inputs.len(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum ResidualRule {
    Never,
    /// Every unit; unequal channels are an error.
    Always,
    /// Only units whose input already has the output width.
    IfEqual,
}

#[derive(Debug, Clone, Copy)]
pub(super) struct UnitStyle {
    pub precision: BlockPrecision,
    pub scale_mode: ScaleMode,
    /// Full-precision variant keeps a ReLU after the convolution.
    pub relu: bool,
    pub kernel: usize,
}

/// `Sign → BinConv → BN`, or `Tanh → Conv → [ReLU] → BN` for full precision.
/// Node names do not depend on the variant, so parameters carry over.
pub(super) fn conv_unit(
    b: &mut GraphBuilder,
    prefix: &str,
    x: NodeId,
    out_ch: usize,
    stride: usize,
    style: UnitStyle,
) -> Result<(NodeId, NodeId), ArchError> {
    let k = style.kernel;
    let pad = k / 2;
    let conv = match style.precision {
        BlockPrecision::Binary => {
            let a = b.sign(&format!("{prefix}.act"), x)?;
            b.bin_conv(&format!("{prefix}.conv"), a, out_ch, k, stride, pad, style.scale_mode)?
        }
        BlockPrecision::Full => {
            let a = b.tanh(&format!("{prefix}.act"), x)?;
            b.conv(&format!("{prefix}.conv"), a, out_ch, k, stride, pad)?
        }
    };
    let mut y = conv;
    if style.precision == BlockPrecision::Full && style.relu {
        y = b.relu(&format!("{prefix}.relu"), y)?;
    }
    Ok((b.batch_norm(&format!("{prefix}.bn"), y)?, conv))
}

pub(super) struct Fractal<'a> {
    pub prefix: &'a str,
    pub out_ch: usize,
    pub rule: ResidualRule,
    pub style: UnitStyle,
    units: usize,
    joins: usize,
    pub convs: Vec<NodeId>,
    pub residual_convs: Vec<NodeId>,
}

impl<'a> Fractal<'a> {
    pub fn new(prefix: &'a str, out_ch: usize, rule: ResidualRule, style: UnitStyle) -> Self {
        Fractal { prefix, out_ch, rule, style, units: 0, joins: 0, convs: Vec::new(), residual_convs: Vec::new() }
    }

    fn unit(&mut self, b: &mut GraphBuilder, x: NodeId) -> Result<NodeId, ArchError> {
        let name = format!("{}.u{}", self.prefix, self.units);
        self.units += 1;
        let in_ch = b.channels(x);
        let residual = match self.rule {
            ResidualRule::Never => false,
            ResidualRule::IfEqual => in_ch == self.out_ch,
            ResidualRule::Always if in_ch != self.out_ch => {
                return Err(ArchError::ResidualShape { in_ch, out_ch: self.out_ch })
            }
            ResidualRule::Always => true,
        };
        let (y, conv) = conv_unit(b, &name, x, self.out_ch, 1, self.style)?;
        self.convs.push(conv);
        if !residual {
            return Ok(y);
        }
        self.residual_convs.push(conv);
        let sum = b.add(&format!("{name}.res"), &[y, x])?;
        b.mark_residual(sum);
        Ok(sum)
    }

    fn join(&mut self, b: &mut GraphBuilder, cols: &[NodeId]) -> Result<NodeId, ArchError> {
        if cols.len() == 1 {
            return Ok(cols[0]);
        }
        let name = format!("{}.join{}", self.prefix, self.joins);
        self.joins += 1;
        Ok(b.join_mean(&name, cols)?)
    }

    fn expand(&mut self, b: &mut GraphBuilder, columns: usize, x: NodeId) -> Result<Vec<NodeId>, ArchError> {
        if columns == 1 {
            return Ok(alloc::vec![self.unit(b, x)?]);
        }
        let inner = self.expand(b, columns - 1, x)?;
        let mid = self.join(b, &inner)?;
        let mut cols = self.expand(b, columns - 1, mid)?;
        cols.push(self.unit(b, x)?);
        Ok(cols)
    }

    /// Expands a `columns`-column block on `x` and joins the columns.
    pub fn build(&mut self, b: &mut GraphBuilder, columns: usize, x: NodeId) -> Result<NodeId, ArchError> {
        if columns == 0 {
            return Err(ArchError::Invalid("a fractal block needs at least one column".into()));
        }
        let cols = self.expand(b, columns, x)?;
        self.join(b, &cols)
    }
}

fn standalone(spec: &FractalSpec, rule: ResidualRule, dense: bool) -> Result<BlockGraph, ArchError> {
    if spec.kernel.is_multiple_of(2) {
        return Err(ArchError::Invalid("kernel must be odd".into()));
    }
    let mut b = GraphBuilder::new(ParamInit::Zeros);
    let input = b.input("in", spec.in_channels, spec.resolution, spec.resolution)?;
    let style =
        UnitStyle { precision: spec.precision, scale_mode: ScaleMode::PerFilter, relu: !dense, kernel: spec.kernel };
    let prefix = String::from("block");
    let mut f = Fractal::new(&prefix, spec.out_channels, rule, style);
    let mut output = f.build(&mut b, spec.columns, input)?;
    if dense {
        output = b.concat("block.cat", &[input, output])?;
    }
    let (convs, residual_convs) = (f.convs, f.residual_convs);
    Ok(BlockGraph { graph: b.finish(output, None), input, output, convs, residual_convs })
}

/// Plain fractal block `F_c` with joins collapsed.
pub fn build_fractal(spec: &FractalSpec) -> Result<BlockGraph, ArchError> {
    standalone(spec, ResidualRule::Never, false)
}

/// Residual fractal block: every convolution unit carries an identity shortcut.
pub fn build_residual_fractal(spec: &FractalSpec) -> Result<BlockGraph, ArchError> {
    if spec.in_channels != spec.out_channels {
        return Err(ArchError::ResidualShape { in_ch: spec.in_channels, out_ch: spec.out_channels });
    }
    let rule = match spec.shortcut {
        ShortcutMode::Residual => ResidualRule::Always,
        ShortcutMode::None => ResidualRule::Never,
    };
    standalone(spec, rule, false)
}

/// Dense fractal block: a fractal producing `growth` channels, concatenated
/// after the input. With residuals, exactly the units whose input already
/// has `growth` channels get an identity shortcut.
pub fn build_dense_fractal_block(
    columns: usize,
    growth: usize,
    in_channels: usize,
    shortcut: ShortcutMode,
    resolution: usize,
) -> Result<BlockGraph, ArchError> {
    if growth == 0 || in_channels == 0 {
        return Err(ArchError::Invalid("channel counts must be positive".into()));
    }
    let spec = FractalSpec {
        columns,
        shortcut,
        in_channels,
        out_channels: growth,
        kernel: 3,
        precision: BlockPrecision::Binary,
        resolution,
    };
    let rule = match shortcut {
        ShortcutMode::Residual => ResidualRule::IfEqual,
        ShortcutMode::None => ResidualRule::Never,
    };
    standalone(&spec, rule, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn convs(bg: &BlockGraph) -> usize {
        bg.count(Op::is_conv)
    }

    #[test]
    fn fractal_counts() {
        let b1 = build_fractal(&FractalSpec::new(1, 4, ShortcutMode::None)).unwrap();
        assert_eq!((convs(&b1), b1.count(|o| matches!(o, Op::JoinMean))), (1, 0));
        let b3 = build_fractal(&FractalSpec::new(3, 4, ShortcutMode::None)).unwrap();
        assert_eq!((convs(&b3), b3.longest_path()), (7, 4));
        let b4 = build_fractal(&FractalSpec::new(4, 4, ShortcutMode::None)).unwrap();
        assert_eq!((convs(&b4), b4.longest_path(), b4.output_join_fan_in()), (15, 8, 4));
        assert!(build_fractal(&FractalSpec::new(0, 4, ShortcutMode::None)).is_err());
    }

    #[test]
    fn residual_fractal() {
        let b1 = build_residual_fractal(&FractalSpec::new(1, 4, ShortcutMode::Residual)).unwrap();
        assert_eq!(b1.count(|o| matches!(o, Op::Add)), 1);
        let b3 = build_residual_fractal(&FractalSpec::new(3, 4, ShortcutMode::Residual)).unwrap();
        assert_eq!((convs(&b3), b3.count(|o| matches!(o, Op::Add)), b3.residual_convs.len()), (7, 7, 7));
        let mut bad = FractalSpec::new(2, 4, ShortcutMode::Residual);
        bad.out_channels = 8;
        assert_eq!(build_residual_fractal(&bad).unwrap_err(), ArchError::ResidualShape { in_ch: 4, out_ch: 8 });
    }

    #[test]
    fn dense_fractal() {
        let b1 = build_dense_fractal_block(1, 8, 16, ShortcutMode::Residual, 4).unwrap();
        assert_eq!((convs(&b1), b1.residual_convs.len()), (1, 0));
        assert_eq!(b1.graph.item_shape(b1.output), [24, 4, 4]);
        let b2 = build_dense_fractal_block(2, 8, 16, ShortcutMode::Residual, 4).unwrap();
        assert_eq!((convs(&b2), b2.residual_convs.len()), (3, 1));
        let b3 = build_dense_fractal_block(3, 8, 16, ShortcutMode::Residual, 4).unwrap();
        assert_eq!((convs(&b3), b3.residual_convs.len()), (7, 4));
    }
}
