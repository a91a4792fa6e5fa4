//! Explicit compute graphs of typed nodes with forward execution and
//! reverse-mode gradients.
//!
//! Nodes are stored in topological order: a node's inputs always have
//! smaller ids. The builder infers and checks per-item shapes `(C, H, W)` as
//! nodes are added, so a finished [`Graph`] is shape-sound for its declared
//! input resolution.

mod builder;
mod exec;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::binarize::ScaleMode;
use crate::tensor::Tensor;

pub use builder::{GraphBuilder, ParamInit};
pub use exec::{infer, join_mean, Bindings, ExecOptions, Forward, Gradients, Mode, Session};

pub const BN_EPSILON: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvAttrs {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolAttrs {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Op {
    Input {
        channels: usize,
        height: usize,
        width: usize,
    },
    Conv2d(ConvAttrs),
    BinConv2d {
        conv: ConvAttrs,
        scale_mode: ScaleMode,
    },
    BatchNorm {
        channels: usize,
        eps: f32,
        momentum: f32,
    },
    Relu,
    Tanh,
    Sign,
    Add,
    Concat,
    JoinMean,
    MaxPool(PoolAttrs),
    AvgPool(PoolAttrs),
    GlobalAvgPool,
    Linear {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    /// Inputs: logits, labels (class indices stored as floats). Output: per-sample loss.
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Full,
    Binary,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "Input",
            Op::Conv2d(_) => "Conv2d",
            Op::BinConv2d { .. } => "BinConv2d",
            Op::BatchNorm { .. } => "BatchNorm",
            Op::Relu => "ReLU",
            Op::Tanh => "Tanh",
            Op::Sign => "Sign",
            Op::Add => "Add",
            Op::Concat => "Concat",
            Op::JoinMean => "JoinMean",
            Op::MaxPool(_) => "MaxPool",
            Op::AvgPool(_) => "AvgPool",
            Op::GlobalAvgPool => "GlobalAvgPool",
            Op::Linear { .. } => "Linear",
            Op::SoftmaxCrossEntropy => "SoftmaxCrossEntropy",
        }
    }

    pub fn precision(&self) -> Precision {
        match self {
            Op::BinConv2d { .. } => Precision::Binary,
            _ => Precision::Full,
        }
    }

    /// Convolution attributes for either precision.
    pub fn conv_attrs(&self) -> Option<&ConvAttrs> {
        match self {
            Op::Conv2d(c) | Op::BinConv2d { conv: c, .. } => Some(c),
            _ => None,
        }
    }

    pub fn is_conv(&self) -> bool {
        self.conv_attrs().is_some()
    }
}

/// Where a node sits in an assembled network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "region", rename_all = "snake_case")]
pub enum Region {
    #[default]
    Other,
    Stem,
    Block {
        stage: usize,
        index: usize,
    },
    Transition {
        stage: usize,
    },
    Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    #[serde(flatten)]
    pub region: Region,
    /// Set on `Add` nodes that implement a block-internal residual shortcut.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub residual: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("shape mismatch at node '{node}': {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("input node '{node}' is not bound")]
    UnboundInput { node: String },
    #[error("node '{node}' needs at least one input")]
    EmptyInputs { node: String },
    #[error("invalid attribute at node '{node}': {detail}")]
    InvalidAttribute { node: String, detail: String },
    #[error("backward called before a forward pass")]
    NoForwardPass,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("graph is not in topological order at node '{node}'")]
    NotTopological { node: String },
}

/// A finished, topologically ordered graph with its parameters.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    shapes: Vec<[usize; 3]>,
    node_params: Vec<Vec<usize>>,
    params: Vec<Param>,
    output: NodeId,
    loss: Option<NodeId>,
}

impl Graph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    /// Per-item output shape `(C, H, W)` at the declared input resolution.
    pub fn item_shape(&self, id: NodeId) -> [usize; 3] {
        self.shapes[id.0]
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn loss(&self) -> Option<NodeId> {
        self.loss
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    pub fn inputs(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids().filter(|&id| matches!(self.node(id).op, Op::Input { .. }))
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_ids(&self, node: NodeId) -> &[usize] {
        &self.node_params[node.0]
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Nodes that consume `id`, in order.
    pub fn consumers(&self, id: NodeId) -> Vec<NodeId> {
        self.ids().filter(|&n| self.node(n).inputs.contains(&id)).collect()
    }

    /// Copies every parameter whose name and shape match from `other`.
    /// Returns the number of tensors copied.
    pub fn load_params_from(&mut self, other: &Graph) -> usize {
        let mut copied = 0;
        for p in &mut self.params {
            if let Some(q) = other.param(&p.name) {
                if q.value.shape() == p.value.shape() {
                    p.value = q.value.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Structural description for export, free of parameter values.
    pub fn describe(&self) -> GraphDesc {
        GraphDesc {
            nodes: self
                .nodes
                .iter()
                .zip(&self.shapes)
                .map(|(n, s)| NodeDesc { node: n.clone(), shape: *s, precision: n.op.precision() })
                .collect(),
            output: self.output,
            loss: self.loss,
        }
    }

    /// Rebuilds a graph from a description; parameters are freshly initialized.
    pub fn from_desc(desc: &GraphDesc, init: ParamInit) -> Result<Graph, GraphError> {
        let mut b = GraphBuilder::new(init);
        for (i, nd) in desc.nodes.iter().enumerate() {
            for inp in &nd.node.inputs {
                if inp.0 >= i {
                    return Err(GraphError::NotTopological { node: nd.node.name.clone() });
                }
            }
            b.set_region(nd.node.region);
            let id = b.push_op(&nd.node.name, nd.node.op, &nd.node.inputs)?;
            if nd.node.residual {
                b.mark_residual(id);
            }
            if b.shape_of(id) != nd.shape {
                return Err(GraphError::ShapeMismatch {
                    node: nd.node.name.clone(),
                    detail: alloc::format!("declared {:?}, inferred {:?}", nd.shape, b.shape_of(id)),
                });
            }
        }
        Ok(b.finish(desc.output, desc.loss))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDesc {
    #[serde(flatten)]
    pub node: Node,
    pub shape: [usize; 3],
    pub precision: Precision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDesc {
    pub nodes: Vec<NodeDesc>,
    pub output: NodeId,
    pub loss: Option<NodeId>,
}
