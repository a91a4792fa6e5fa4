use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConvAttrs, Graph, GraphError, Node, NodeId, Op, Param, PoolAttrs, Region, BN_EPSILON, BN_MOMENTUM};
use crate::binarize::ScaleMode;
use crate::ops::out_extent;
use crate::tensor::{Shape, Tensor};

/// How parameter tensors are filled when nodes are created.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamInit {
    /// Glorot-uniform weights from a seeded stream; BN scale 1, shift 0.
    Seeded(u64),
    /// All weights zero; enough for structural analysis.
    Zeros,
}

pub struct GraphBuilder {
    nodes: Vec<Node>,
    shapes: Vec<[usize; 3]>,
    node_params: Vec<Vec<usize>>,
    params: Vec<Param>,
    region: Region,
    init: ParamInit,
    rng: ChaCha8Rng,
}

impl GraphBuilder {
    pub fn new(init: ParamInit) -> Self {
        let seed = match init {
            ParamInit::Seeded(s) => s,
            ParamInit::Zeros => 0,
        };
        GraphBuilder {
            nodes: Vec::new(),
            shapes: Vec::new(),
            node_params: Vec::new(),
            params: Vec::new(),
            region: Region::Other,
            init,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Region tag applied to nodes added from now on.
    pub fn set_region(&mut self, region: Region) {
        self.region = region;
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn shape_of(&self, id: NodeId) -> [usize; 3] {
        self.shapes[id.0]
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.shapes[id.0][0]
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

    pub fn mark_residual(&mut self, id: NodeId) {
        self.nodes[id.0].residual = true;
    }

    pub fn finish(self, output: NodeId, loss: Option<NodeId>) -> Graph {
        Graph {
            nodes: self.nodes,
            shapes: self.shapes,
            node_params: self.node_params,
            params: self.params,
            output,
            loss,
        }
    }

    pub fn input(&mut self, name: &str, channels: usize, height: usize, width: usize) -> Result<NodeId, GraphError> {
        self.push_op(name, Op::Input { channels, height, width }, &[])
    }

    pub fn conv(
        &mut self,
        name: &str,
        x: NodeId,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, GraphError> {
        let conv = ConvAttrs { in_ch: self.channels(x), out_ch, kernel, stride, padding, bias: false };
        self.push_op(name, Op::Conv2d(conv), &[x])
    }

    #[allow(clippy::too_many_arguments)]
    pub fn bin_conv(
        &mut self,
        name: &str,
        x: NodeId,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        scale_mode: ScaleMode,
    ) -> Result<NodeId, GraphError> {
        let conv = ConvAttrs { in_ch: self.channels(x), out_ch, kernel, stride, padding, bias: false };
        self.push_op(name, Op::BinConv2d { conv, scale_mode }, &[x])
    }

    pub fn batch_norm(&mut self, name: &str, x: NodeId) -> Result<NodeId, GraphError> {
        let channels = self.channels(x);
        self.push_op(name, Op::BatchNorm { channels, eps: BN_EPSILON, momentum: BN_MOMENTUM }, &[x])
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> Result<NodeId, GraphError> {
        self.push_op(name, Op::Relu, &[x])
    }

    pub fn tanh(&mut self, name: &str, x: NodeId) -> Result<NodeId, GraphError> {
        self.push_op(name, Op::Tanh, &[x])
    }

    pub fn sign(&mut self, name: &str, x: NodeId) -> Result<NodeId, GraphError> {
        self.push_op(name, Op::Sign, &[x])
    }

    pub fn add(&mut self, name: &str, xs: &[NodeId]) -> Result<NodeId, GraphError> {
        self.push_op(name, Op::Add, xs)
    }

    pub fn concat(&mut self, name: &str, xs: &[NodeId]) -> Result<NodeId, GraphError> {
        self.push_op(name, Op::Concat, xs)
    }

    pub fn join_mean(&mut self, name: &str, xs: &[NodeId]) -> Result<NodeId, GraphError> {
        self.push_op(name, Op::JoinMean, xs)
    }

    pub fn max_pool(
        &mut self,
        name: &str,
        x: NodeId,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, GraphError> {
        self.push_op(name, Op::MaxPool(PoolAttrs { kernel, stride, padding }), &[x])
    }

    pub fn avg_pool(
        &mut self,
        name: &str,
        x: NodeId,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, GraphError> {
        self.push_op(name, Op::AvgPool(PoolAttrs { kernel, stride, padding }), &[x])
    }

    pub fn global_avg_pool(&mut self, name: &str, x: NodeId) -> Result<NodeId, GraphError> {
        self.push_op(name, Op::GlobalAvgPool, &[x])
    }

    pub fn linear(&mut self, name: &str, x: NodeId, out_features: usize) -> Result<NodeId, GraphError> {
        let [c, h, w] = self.shape_of(x);
        self.push_op(name, Op::Linear { in_features: c * h * w, out_features, bias: true }, &[x])
    }

    pub fn softmax_cross_entropy(&mut self, name: &str, logits: NodeId, labels: NodeId) -> Result<NodeId, GraphError> {
        self.push_op(name, Op::SoftmaxCrossEntropy, &[logits, labels])
    }

    /// Appends a node after validating its inputs and inferring its shape.
    pub fn push_op(&mut self, name: &str, op: Op, inputs: &[NodeId]) -> Result<NodeId, GraphError> {
        let id = NodeId(self.nodes.len());
        for inp in inputs {
            if inp.0 >= id.0 {
                return Err(GraphError::UnknownNode(*inp));
            }
        }
        let shape = self.infer(name, &op, inputs)?;
        let params = self.make_params(name, &op, shape);
        let first = self.params.len();
        self.params.extend(params);
        self.node_params.push((first..self.params.len()).collect());
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs: inputs.to_vec(),
            region: self.region,
            residual: false,
        });
        self.shapes.push(shape);
        Ok(id)
    }

    fn infer(&self, name: &str, op: &Op, inputs: &[NodeId]) -> Result<[usize; 3], GraphError> {
        let mismatch = |detail: String| GraphError::ShapeMismatch { node: name.to_string(), detail };
        let arity = |n: usize| -> Result<(), GraphError> {
            if inputs.len() != n {
                return Err(GraphError::InvalidAttribute {
                    node: name.to_string(),
                    detail: format!("expected {n} inputs, got {}", inputs.len()),
                });
            }
            Ok(())
        };
        let shape = |i: usize| self.shapes[inputs[i].0];
        match *op {
            Op::Input { channels, height, width } => {
                arity(0)?;
                Ok([channels, height, width])
            }
            Op::Conv2d(c) | Op::BinConv2d { conv: c, .. } => {
                arity(1)?;
                let [ch, h, w] = shape(0);
                if ch != c.in_ch {
                    return Err(mismatch(format!("input has {ch} channels, conv expects {}", c.in_ch)));
                }
                if c.out_ch == 0 {
                    return Err(GraphError::InvalidAttribute {
                        node: name.to_string(),
                        detail: "zero output channels".into(),
                    });
                }
                let oh = out_extent(h, c.kernel, c.stride, c.padding);
                let ow = out_extent(w, c.kernel, c.stride, c.padding);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok([c.out_ch, oh, ow]),
                    _ => Err(mismatch(format!("kernel {} does not fit {h}x{w}", c.kernel))),
                }
            }
            Op::BatchNorm { channels, .. } => {
                arity(1)?;
                if shape(0)[0] != channels {
                    return Err(mismatch(format!("batch norm over {channels} channels, input has {}", shape(0)[0])));
                }
                Ok(shape(0))
            }
            Op::Relu | Op::Tanh | Op::Sign => {
                arity(1)?;
                Ok(shape(0))
            }
            Op::Add | Op::JoinMean => {
                if inputs.is_empty() {
                    return Err(GraphError::EmptyInputs { node: name.to_string() });
                }
                let s0 = shape(0);
                for i in 1..inputs.len() {
                    if shape(i) != s0 {
                        return Err(mismatch(format!("inputs {:?} and {:?} differ", s0, shape(i))));
                    }
                }
                Ok(s0)
            }
            Op::Concat => {
                if inputs.is_empty() {
                    return Err(GraphError::EmptyInputs { node: name.to_string() });
                }
                let [_, h, w] = shape(0);
                let mut c = 0;
                for i in 0..inputs.len() {
                    let s = shape(i);
                    if s[1] != h || s[2] != w {
                        return Err(mismatch(format!("spatial extents {:?} and {:?} differ", shape(0), s)));
                    }
                    c += s[0];
                }
                Ok([c, h, w])
            }
            Op::MaxPool(p) | Op::AvgPool(p) => {
                arity(1)?;
                let [c, h, w] = shape(0);
                match (out_extent(h, p.kernel, p.stride, p.padding), out_extent(w, p.kernel, p.stride, p.padding)) {
                    (Some(oh), Some(ow)) => Ok([c, oh, ow]),
                    _ => Err(mismatch(format!("pool window {} does not fit {h}x{w}", p.kernel))),
                }
            }
            Op::GlobalAvgPool => {
                arity(1)?;
                Ok([shape(0)[0], 1, 1])
            }
            Op::Linear { in_features, out_features, .. } => {
                arity(1)?;
                let [c, h, w] = shape(0);
                if c * h * w != in_features {
                    return Err(mismatch(format!("linear expects {in_features} features, input has {}", c * h * w)));
                }
                Ok([out_features, 1, 1])
            }
            Op::SoftmaxCrossEntropy => {
                arity(2)?;
                let [_, h, w] = shape(0);
                if h != 1 || w != 1 {
                    return Err(mismatch("logits must be (C, 1, 1)".into()));
                }
                if shape(1) != [1, 1, 1] {
                    return Err(mismatch("labels must be (1, 1, 1) per item".into()));
                }
                Ok([1, 1, 1])
            }
        }
    }

    fn make_params(&mut self, name: &str, op: &Op, _shape: [usize; 3]) -> Vec<Param> {
        let param =
            |suffix: &str, value: Tensor, trainable: bool| Param { name: format!("{name}.{suffix}"), value, trainable };
        match *op {
            Op::Conv2d(c) | Op::BinConv2d { conv: c, .. } => {
                let shape = Shape::new(c.out_ch, c.in_ch, c.kernel, c.kernel);
                let fan_in = c.in_ch * c.kernel * c.kernel;
                let fan_out = c.out_ch * c.kernel * c.kernel;
                let mut ps = vec![param("weight", self.glorot(shape, fan_in, fan_out), true)];
                if c.bias {
                    ps.push(param("bias", Tensor::zeros(Shape::new(1, c.out_ch, 1, 1)), true));
                }
                ps
            }
            Op::BatchNorm { channels, .. } => {
                let v = Shape::new(1, channels, 1, 1);
                vec![
                    param("gamma", Tensor::full(v, 1.0), true),
                    param("beta", Tensor::zeros(v), true),
                    param("running_mean", Tensor::zeros(v), false),
                    param("running_var", Tensor::full(v, 1.0), false),
                ]
            }
            Op::Linear { in_features, out_features, bias } => {
                let shape = Shape::new(out_features, in_features, 1, 1);
                let mut ps = vec![param("weight", self.glorot(shape, in_features, out_features), true)];
                if bias {
                    ps.push(param("bias", Tensor::zeros(Shape::new(1, out_features, 1, 1)), true));
                }
                ps
            }
            _ => Vec::new(),
        }
    }

    fn glorot(&mut self, shape: Shape, fan_in: usize, fan_out: usize) -> Tensor {
        match self.init {
            ParamInit::Zeros => Tensor::zeros(shape),
            ParamInit::Seeded(_) => {
                let limit = libm::sqrtf(6.0 / (fan_in + fan_out) as f32);
                let rng = &mut self.rng;
                Tensor::from_fn(shape, |_| rng.gen_range(-limit..limit))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_requires_identical_shapes() {
        let mut b = GraphBuilder::new(ParamInit::Zeros);
        let x = b.input("x", 2, 4, 4).unwrap();
        let y = b.input("y", 3, 4, 4).unwrap();
        let err = b.add("sum", &[x, y]).unwrap_err();
        assert!(matches!(err, GraphError::ShapeMismatch { ref node, .. } if node == "sum"));
        assert!(matches!(b.join_mean("j", &[]), Err(GraphError::EmptyInputs { .. })));
    }

    #[test]
    fn concat_sums_channels() {
        let mut b = GraphBuilder::new(ParamInit::Zeros);
        let x = b.input("x", 2, 4, 4).unwrap();
        let y = b.input("y", 3, 4, 4).unwrap();
        let z = b.input("z", 3, 2, 2).unwrap();
        let c = b.concat("cat", &[x, y]).unwrap();
        assert_eq!(b.shape_of(c), [5, 4, 4]);
        assert!(b.concat("bad", &[x, z]).is_err());
    }

    #[test]
    fn conv_shape_inference() {
        let mut b = GraphBuilder::new(ParamInit::Seeded(1));
        let x = b.input("x", 3, 224, 224).unwrap();
        let c = b.conv("stem", x, 64, 7, 2, 3).unwrap();
        let p = b.max_pool("pool", c, 3, 2, 1).unwrap();
        assert_eq!(b.shape_of(c), [64, 112, 112]);
        assert_eq!(b.shape_of(p), [64, 56, 56]);
    }
}
