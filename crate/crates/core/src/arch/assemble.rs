use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::fractal::{conv_unit, Fractal, ResidualRule, UnitStyle};
use super::{ArchError, ArchSpec, Dataset, Family, TransitionPlan};
use crate::graph::{Graph, GraphBuilder, NodeId, Op, ParamInit, Region};

/// An assembled network with a cross-entropy loss attached.
#[derive(Debug, Clone)]
pub struct TrainingNetwork {
    pub graph: Graph,
    pub input: NodeId,
    pub labels: NodeId,
    pub logits: NodeId,
    pub loss: NodeId,
}

/// Longest input-to-output chain of convolution and linear layers.
pub fn count_depth(graph: &Graph) -> usize {
    let mut depth = vec![0usize; graph.len()];
    for id in graph.ids() {
        let node = graph.node(id);
        let base = node.inputs.iter().map(|i| depth[i.0]).max().unwrap_or(0);
        let own = matches!(node.op, Op::Conv2d(_) | Op::BinConv2d { .. } | Op::Linear { .. });
        depth[id.0] = base + usize::from(own);
    }
    depth[graph.output().0]
}

/// Output channel count of each transition of a dense network.
fn dense_transition_widths(arch: &ArchSpec) -> Vec<usize> {
    let floor_div = |c: usize, r: f64| libm::floor(c as f64 / r) as usize;
    match &arch.transition {
        TransitionPlan::Widths(w) => w.clone(),
        TransitionPlan::Skeleton { stem, growth, reductions } => {
            let mut c = *stem;
            let mut out = Vec::new();
            for (s, &n) in arch.stage_blocks.iter().enumerate() {
                if s > 0 {
                    c = floor_div(c, reductions[s - 1]);
                    out.push(c);
                }
                c += n * growth;
            }
            out
        }
        TransitionPlan::Reduction(r) => {
            let mut c = arch.stem_channels;
            let mut out = Vec::new();
            for (s, &n) in arch.stage_blocks.iter().enumerate() {
                if s > 0 {
                    c = floor_div(c, r[s - 1]);
                    out.push(c);
                }
                c += n * arch.width;
            }
            out
        }
        TransitionPlan::Double => Vec::new(),
    }
}

fn stem(b: &mut GraphBuilder, arch: &ArchSpec, x: NodeId) -> Result<NodeId, ArchError> {
    b.set_region(Region::Stem);
    let ch = arch.stem_channels;
    let y = match arch.dataset {
        Dataset::Imagenet => {
            let c = b.conv("stem.conv", x, ch, 7, 2, 3)?;
            let n = b.batch_norm("stem.bn", c)?;
            let r = b.relu("stem.relu", n)?;
            b.max_pool("stem.pool", r, 3, 2, 1)?
        }
        Dataset::Cifar => {
            let c = b.conv("stem.conv", x, ch, 3, 1, 1)?;
            let n = b.batch_norm("stem.bn", c)?;
            b.relu("stem.relu", n)?
        }
    };
    Ok(y)
}

/// Full-precision pooling transition: `AvgPool 2×2 → Conv 1×1 → BN`.
fn pool_transition(b: &mut GraphBuilder, prefix: &str, x: NodeId, out_ch: usize) -> Result<NodeId, ArchError> {
    let p = b.avg_pool(&format!("{prefix}.pool"), x, 2, 2, 0)?;
    let c = b.conv(&format!("{prefix}.conv"), p, out_ch, 1, 1, 0)?;
    Ok(b.batch_norm(&format!("{prefix}.bn"), c)?)
}

fn body(b: &mut GraphBuilder, arch: &ArchSpec, mut x: NodeId) -> Result<NodeId, ArchError> {
    let style =
        UnitStyle { precision: arch.precision, scale_mode: arch.scale_mode, relu: !arch.family.is_dense(), kernel: 3 };
    let widths = dense_transition_widths(arch);
    for (s, &blocks) in arch.stage_blocks.iter().enumerate() {
        match arch.family {
            Family::F | Family::RF => {
                if s > 0 {
                    b.set_region(Region::Transition { stage: s });
                    let ch = 2 * b.channels(x);
                    let c = b.conv(&format!("t{s}.conv"), x, ch, 1, 2, 0)?;
                    x = b.batch_norm(&format!("t{s}.bn"), c)?;
                }
                let rule = if arch.family == Family::RF { ResidualRule::Always } else { ResidualRule::Never };
                for i in 0..blocks {
                    b.set_region(Region::Block { stage: s, index: i });
                    let prefix = format!("s{s}.b{i}");
                    let ch = b.channels(x);
                    x = Fractal::new(&prefix, ch, rule, style).build(b, arch.columns, x)?;
                }
            }
            Family::BiReal => {
                let cout = arch.width << s;
                for i in 0..blocks {
                    for j in 0..2 {
                        let prefix = format!("s{s}.b{i}.u{j}");
                        if s > 0 && i == 0 && j == 0 {
                            b.set_region(Region::Transition { stage: s });
                            let short = pool_transition(b, &format!("{prefix}.down"), x, cout)?;
                            b.set_region(Region::Block { stage: s, index: i });
                            let (y, _) = conv_unit(b, &prefix, x, cout, 2, style)?;
                            x = b.add(&format!("{prefix}.res"), &[y, short])?;
                        } else {
                            b.set_region(Region::Block { stage: s, index: i });
                            let (y, _) = conv_unit(b, &prefix, x, cout, 1, style)?;
                            let sum = b.add(&format!("{prefix}.res"), &[y, x])?;
                            b.mark_residual(sum);
                            x = sum;
                        }
                    }
                }
            }
            Family::DF | Family::DRF | Family::BinaryDenseNet => {
                if s > 0 {
                    b.set_region(Region::Transition { stage: s });
                    x = pool_transition(b, &format!("t{s}"), x, widths[s - 1])?;
                }
                let rule = if arch.family == Family::DRF { ResidualRule::IfEqual } else { ResidualRule::Never };
                for i in 0..blocks {
                    b.set_region(Region::Block { stage: s, index: i });
                    let prefix = format!("s{s}.b{i}");
                    let new = if arch.family == Family::BinaryDenseNet {
                        conv_unit(b, &format!("{prefix}.u0"), x, arch.width, 1, style)?.0
                    } else {
                        Fractal::new(&prefix, arch.width, rule, style).build(b, arch.columns, x)?
                    };
                    x = b.concat(&format!("{prefix}.cat"), &[x, new])?;
                }
            }
        }
    }
    Ok(x)
}

fn build(arch: &ArchSpec, init: ParamInit) -> Result<(GraphBuilder, NodeId, NodeId), ArchError> {
    arch.validate()?;
    let mut b = GraphBuilder::new(init);
    let res = arch.input_resolution;
    let input = b.input("input", 3, res, res)?;
    let x = stem(&mut b, arch, input)?;
    let x = body(&mut b, arch, x)?;
    b.set_region(Region::Head);
    let p = b.global_avg_pool("head.pool", x)?;
    let logits = b.linear("head.fc", p, arch.num_classes)?;
    Ok((b, input, logits))
}

fn check_depth(arch: &ArchSpec, graph: &Graph) -> Result<(), ArchError> {
    let actual = count_depth(graph);
    if actual != arch.depth() {
        return Err(ArchError::DepthMismatch { expected: arch.depth(), actual });
    }
    Ok(())
}

/// Inference graph: stem, stages of blocks with transitions, pooled linear head.
pub fn assemble_network(arch: &ArchSpec, init: ParamInit) -> Result<Graph, ArchError> {
    let (b, _, logits) = build(arch, init)?;
    let graph = b.finish(logits, None);
    check_depth(arch, &graph)?;
    Ok(graph)
}

/// [`assemble_network`] plus a label input and per-sample cross-entropy.
pub fn assemble_training_network(arch: &ArchSpec, init: ParamInit) -> Result<TrainingNetwork, ArchError> {
    let (mut b, input, logits) = build(arch, init)?;
    let labels = b.input("labels", 1, 1, 1)?;
    let loss = b.softmax_cross_entropy("head.loss", logits, labels)?;
    let graph = b.finish(logits, Some(loss));
    check_depth(arch, &graph)?;
    Ok(TrainingNetwork { graph, input, labels, logits, loss })
}
