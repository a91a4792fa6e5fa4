use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::{Graph, GraphError, NodeId, Op};
use crate::binarize::{activation_grad_piecewise, sign, weight_grad_ste, weight_scales, BinConvParams};
use crate::bitkernel::{binary_conv2d, scale_channels, PackedActivations};
use crate::ops::{self, ConvGeom, PoolGeom};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are updated.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    /// Evaluate binary convolutions with the bit-packed kernel in eval mode.
    pub packed_binary: bool,
    /// Propagate gradients into `Input` nodes.
    pub input_grads: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions { packed_binary: false, input_grads: true }
    }
}

/// Tensors bound to `Input` nodes.
#[derive(Debug, Clone, Default)]
pub struct Bindings(BTreeMap<NodeId, Tensor>);

impl Bindings {
    pub fn new() -> Self {
        Bindings(BTreeMap::new())
    }

    pub fn with(mut self, id: NodeId, t: Tensor) -> Self {
        self.0.insert(id, t);
        self
    }

    pub fn insert(&mut self, id: NodeId, t: Tensor) {
        self.0.insert(id, t);
    }

    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.0.get(&id)
    }
}

#[derive(Debug, Clone)]
enum Cache {
    None,
    /// Sign of each latent weight and the per-filter scales.
    BinConv {
        signs: Vec<f32>,
        scale: Vec<f32>,
    },
    BatchNorm {
        xhat: Tensor,
        var: Vec<f32>,
    },
    MaxPool(Vec<u32>),
    Softmax(Tensor),
}

/// Activations of every node from one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    values: Vec<Tensor>,
    caches: Vec<Cache>,
    mode: Mode,
}

impl Forward {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.values.first().map_or(0, |t| t.shape().n())
    }
}

/// Gradients with respect to node outputs and parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].as_ref()
    }

    /// Gradient of parameter `index` (see [`Graph::params`]), if it was reached.
    pub fn param(&self, index: usize) -> Option<&Tensor> {
        self.params[index].as_ref()
    }

    pub fn params(&self) -> &[Option<Tensor>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Option<Tensor>> {
        self.params
    }
}

/// Element-wise mean of same-shaped tensors.
pub fn join_mean(inputs: &[&Tensor]) -> Result<Tensor, GraphError> {
    let first = inputs.first().ok_or(GraphError::EmptyInputs { node: "join_mean".to_string() })?;
    let mut out = (*first).clone();
    for t in &inputs[1..] {
        if t.shape() != first.shape() {
            return Err(GraphError::ShapeMismatch {
                node: "join_mean".to_string(),
                detail: format!("{} vs {}", first.shape(), t.shape()),
            });
        }
        out.add_assign(t);
    }
    if inputs.len() > 1 {
        out.scale_assign(1.0 / inputs.len() as f32);
    }
    Ok(out)
}

/// Owns a graph and the state of its most recent forward pass.
#[derive(Debug, Clone)]
pub struct Session {
    graph: Graph,
    options: ExecOptions,
    last: Option<Forward>,
}

impl Session {
    pub fn new(graph: Graph) -> Self {
        Session { graph, options: ExecOptions::default(), last: None }
    }

    pub fn with_options(graph: Graph, options: ExecOptions) -> Self {
        Session { graph, options, last: None }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Mutable access to the graph; drops the cached forward pass.
    pub fn graph_mut(&mut self) -> &mut Graph {
        self.last = None;
        &mut self.graph
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    pub fn options(&self) -> ExecOptions {
        self.options
    }

    pub fn set_options(&mut self, options: ExecOptions) {
        self.options = options;
    }

    pub fn last(&self) -> Option<&Forward> {
        self.last.as_ref()
    }

    /// Runs every node; in train mode batch-norm running statistics are updated.
    pub fn forward(&mut self, inputs: &Bindings, mode: Mode) -> Result<&Forward, GraphError> {
        self.last = None;
        let last = self.graph.len().checked_sub(1).ok_or(GraphError::UnknownNode(NodeId(0)))?;
        let (fwd, updates) = run_forward(&self.graph, inputs, mode, self.options, last, None)?;
        for (pid, value) in updates {
            self.graph.params[pid].value.data_mut().copy_from_slice(&value);
        }
        Ok(self.last.insert(fwd))
    }

    /// Train-mode forward that folds batch statistics into the running ones
    /// with weight `1/k`, so `k = 1, 2, …` over a sequence of batches yields
    /// their plain average. Clears the stored pass.
    pub fn accumulate_norm_stats(&mut self, inputs: &Bindings, k: usize) -> Result<(), GraphError> {
        self.last = None;
        let last = self.graph.len().checked_sub(1).ok_or(GraphError::UnknownNode(NodeId(0)))?;
        let keep = 1.0 - 1.0 / k.max(1) as f32;
        let (_, updates) = run_forward(&self.graph, inputs, Mode::Train, self.options, last, Some(keep))?;
        for (pid, value) in updates {
            self.graph.params[pid].value.data_mut().copy_from_slice(&value);
        }
        Ok(())
    }

    /// Backpropagates from the loss node (or the output node when the graph
    /// has no loss) with an all-ones seed, i.e. the gradient of the sum.
    pub fn backward(&self) -> Result<Gradients, GraphError> {
        let fwd = self.last.as_ref().ok_or(GraphError::NoForwardPass)?;
        let root = self.graph.loss().unwrap_or(self.graph.output());
        let seed = Tensor::full(fwd.value(root).shape(), 1.0);
        run_backward(&self.graph, fwd, root, seed, self.options)
    }

    pub fn backward_from(&self, root: NodeId, seed: Tensor) -> Result<Gradients, GraphError> {
        let fwd = self.last.as_ref().ok_or(GraphError::NoForwardPass)?;
        if root.0 >= self.graph.len() {
            return Err(GraphError::UnknownNode(root));
        }
        if seed.shape() != fwd.value(root).shape() {
            return Err(GraphError::ShapeMismatch {
                node: self.graph.node(root).name.clone(),
                detail: format!("seed {} vs value {}", seed.shape(), fwd.value(root).shape()),
            });
        }
        run_backward(&self.graph, fwd, root, seed, self.options)
    }
}

fn conv_geom(name: &str, c: &super::ConvAttrs, x: &Tensor) -> Result<ConvGeom, GraphError> {
    let s = x.shape();
    ConvGeom::new(c.in_ch, c.out_ch, c.kernel, c.stride, c.padding, s.h(), s.w()).ok_or_else(|| {
        GraphError::ShapeMismatch { node: name.to_string(), detail: format!("kernel {} does not fit {}", c.kernel, s) }
    })
}

fn pool_geom(name: &str, p: &super::PoolAttrs, x: &Tensor) -> Result<PoolGeom, GraphError> {
    let s = x.shape();
    PoolGeom::new(p.kernel, p.stride, p.padding, s.h(), s.w()).ok_or_else(|| GraphError::ShapeMismatch {
        node: name.to_string(),
        detail: format!("pool window {} does not fit {}", p.kernel, s),
    })
}

fn add_bias(t: &mut Tensor, bias: &[f32]) {
    let s = t.shape();
    let plane = s.plane();
    for (i, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
        let b = bias[i % s.c()];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

/// Eval-mode forward pass through `target` without touching the graph.
/// Nodes after `target` are not evaluated, so their inputs need no binding.
pub fn infer(graph: &Graph, inputs: &Bindings, target: NodeId, opts: ExecOptions) -> Result<Forward, GraphError> {
    if target.0 >= graph.len() {
        return Err(GraphError::UnknownNode(target));
    }
    Ok(run_forward(graph, inputs, Mode::Eval, opts, target.0, None)?.0)
}

type StatUpdates = Vec<(usize, Vec<f32>)>;

fn run_forward(
    graph: &Graph,
    inputs: &Bindings,
    mode: Mode,
    opts: ExecOptions,
    last: usize,
    keep: Option<f32>,
) -> Result<(Forward, StatUpdates), GraphError> {
    let mut values: Vec<Tensor> = Vec::with_capacity(last + 1);
    let mut caches: Vec<Cache> = Vec::with_capacity(last + 1);
    let mut updates: StatUpdates = Vec::new();
    let mut batch: Option<usize> = None;

    for idx in 0..=last {
        let node = &graph.nodes[idx];
        let name = node.name.as_str();
        let pids = &graph.node_params[idx];
        let x = |i: usize| &values[node.inputs[i].0];
        let mismatch = |detail: alloc::string::String| GraphError::ShapeMismatch { node: name.to_string(), detail };
        let mut cache = Cache::None;

        let out = match node.op {
            Op::Input { channels, height, width } => {
                let t = inputs.get(NodeId(idx)).ok_or(GraphError::UnboundInput { node: name.to_string() })?;
                let s = t.shape();
                if [s.c(), s.h(), s.w()] != [channels, height, width] {
                    return Err(mismatch(format!("bound tensor {s}, declared ({channels}, {height}, {width})")));
                }
                match batch {
                    Some(n) if n != s.n() => return Err(mismatch(format!("batch {} differs from {n}", s.n()))),
                    _ => batch = Some(s.n()),
                }
                t.clone()
            }
            Op::Conv2d(c) => {
                let g = conv_geom(name, &c, x(0))?;
                let w = &graph.params[pids[0]].value;
                let mut y = ops::conv2d_forward(&g, x(0), w.data());
                if c.bias {
                    add_bias(&mut y, graph.params[pids[1]].value.data());
                }
                y
            }
            Op::BinConv2d { conv: c, scale_mode } => {
                let w = &graph.params[pids[0]].value;
                if opts.packed_binary && mode == Mode::Eval {
                    let mut p = BinConvParams::new(w.clone(), scale_mode).map_err(|e| mismatch(e.to_string()))?;
                    p.pack();
                    let acts = PackedActivations::from_tensor(x(0));
                    binary_conv2d(&acts, &p, c.stride, c.padding).map_err(|e| mismatch(e.to_string()))?
                } else {
                    let g = conv_geom(name, &c, x(0))?;
                    let scale = weight_scales(w, scale_mode).map_err(|e| mismatch(e.to_string()))?;
                    let signs: Vec<f32> = w.data().iter().map(|&v| sign(v)).collect();
                    let mut y = ops::conv2d_forward(&g, x(0), &signs);
                    scale_channels(&mut y, &scale);
                    cache = Cache::BinConv { signs, scale };
                    y
                }
            }
            Op::BatchNorm { eps, momentum, .. } => {
                let gamma = graph.params[pids[0]].value.data();
                let beta = graph.params[pids[1]].value.data();
                let (y, xhat, var, batch_stats) = match mode {
                    Mode::Train => {
                        let (mean, var) = ops::channel_stats(x(0));
                        let (y, xhat) = ops::batch_norm_apply(x(0), &mean, &var, gamma, beta, eps);
                        (y, xhat, var.clone(), Some((mean, var)))
                    }
                    Mode::Eval => {
                        let mean = graph.params[pids[2]].value.data();
                        let var = graph.params[pids[3]].value.data();
                        let (y, xhat) = ops::batch_norm_apply(x(0), mean, var, gamma, beta, eps);
                        (y, xhat, var.to_vec(), None)
                    }
                };
                cache = Cache::BatchNorm { xhat, var };
                if let Some((mean, var)) = batch_stats {
                    let momentum = keep.unwrap_or(momentum);
                    for (pid, batch_stat) in [(pids[2], mean), (pids[3], var)] {
                        let running = graph.params[pid].value.data();
                        let blended =
                            running.iter().zip(&batch_stat).map(|(r, b)| momentum * r + (1.0 - momentum) * b).collect();
                        updates.push((pid, blended));
                    }
                }
                y
            }
            Op::Relu => x(0).map(|v| v.max(0.0)),
            Op::Tanh => x(0).map(libm::tanhf),
            Op::Sign => x(0).map(sign),
            Op::Add => {
                let mut y = x(0).clone();
                for i in 1..node.inputs.len() {
                    y.add_assign(x(i));
                }
                y
            }
            Op::JoinMean => {
                let xs: Vec<&Tensor> = node.inputs.iter().map(|i| &values[i.0]).collect();
                join_mean(&xs).map_err(|_| mismatch("inputs differ in shape".into()))?
            }
            Op::Concat => {
                let s0 = x(0).shape();
                let channels: usize = node.inputs.iter().map(|i| values[i.0].shape().c()).sum();
                let mut y = Tensor::zeros(s0.with_channels(channels));
                for b in 0..s0.n() {
                    let mut off = 0;
                    for i in &node.inputs {
                        let src = values[i.0].item(b);
                        y.item_mut(b)[off..off + src.len()].copy_from_slice(src);
                        off += src.len();
                    }
                }
                y
            }
            Op::MaxPool(p) => {
                let g = pool_geom(name, &p, x(0))?;
                let (y, arg) = ops::max_pool_forward(&g, x(0));
                cache = Cache::MaxPool(arg);
                y
            }
            Op::AvgPool(p) => {
                let g = pool_geom(name, &p, x(0))?;
                ops::avg_pool_forward(&g, x(0))
            }
            Op::GlobalAvgPool => {
                let s = x(0).shape();
                let inv = 1.0 / s.plane() as f32;
                let means = x(0).data().chunks(s.plane()).map(|c| c.iter().sum::<f32>() * inv).collect();
                Tensor::from_vec(Shape::new(s.n(), s.c(), 1, 1), means).expect("one mean per plane")
            }
            Op::Linear { in_features, out_features, bias } => {
                let n = x(0).shape().n();
                let mut y = Tensor::zeros(Shape::new(n, out_features, 1, 1));
                // y[n, o] = Σ_i W[o, i] x[n, i]
                ops::gemm_nt(
                    n,
                    in_features,
                    out_features,
                    x(0).data(),
                    graph.params[pids[0]].value.data(),
                    y.data_mut(),
                );
                if bias {
                    add_bias(&mut y, graph.params[pids[1]].value.data());
                }
                y
            }
            Op::SoftmaxCrossEntropy => {
                let logits = x(0);
                let labels = x(1);
                let s = logits.shape();
                let classes = s.c();
                let mut probs = Tensor::zeros(s);
                let mut loss = Tensor::zeros(Shape::new(s.n(), 1, 1, 1));
                for b in 0..s.n() {
                    let label = labels.data()[b];
                    if !(label >= 0.0 && (label as usize) < classes && libm::truncf(label) == label) {
                        return Err(GraphError::InvalidAttribute {
                            node: name.to_string(),
                            detail: format!("label {label} outside 0..{classes}"),
                        });
                    }
                    let z = logits.item(b);
                    let m = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let mut denom = 0.0f64;
                    for &v in z {
                        denom += libm::exp((v - m) as f64);
                    }
                    let log_denom = libm::log(denom);
                    let p = probs.item_mut(b);
                    for (pi, &v) in p.iter_mut().zip(z) {
                        *pi = libm::exp((v - m) as f64 - log_denom) as f32;
                    }
                    loss.data_mut()[b] = (log_denom - (z[label as usize] - m) as f64) as f32;
                }
                cache = Cache::Softmax(probs);
                loss
            }
        };
        values.push(out);
        caches.push(cache);
    }
    Ok((Forward { values, caches, mode }, updates))
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn run_backward(
    graph: &Graph,
    fwd: &Forward,
    root: NodeId,
    seed: Tensor,
    opts: ExecOptions,
) -> Result<Gradients, GraphError> {
    let mut grads: Vec<Option<Tensor>> = vec![None; graph.len()];
    let mut pgrads: Vec<Option<Tensor>> = vec![None; graph.params.len()];
    grads[root.0] = Some(seed);

    let wants = |id: NodeId| opts.input_grads || !matches!(graph.nodes[id.0].op, Op::Input { .. });

    if root.0 >= fwd.values.len() {
        return Err(GraphError::UnknownNode(root));
    }
    for idx in (0..=root.0).rev() {
        let Some(g) = grads[idx].take() else { continue };
        let node = &graph.nodes[idx];
        let name = node.name.as_str();
        let pids = &graph.node_params[idx];
        let x = |i: usize| fwd.value(node.inputs[i]);
        let mismatch = |detail: alloc::string::String| GraphError::ShapeMismatch { node: name.to_string(), detail };

        match node.op {
            Op::Input { .. } => {}
            Op::Conv2d(c) => {
                let geom = conv_geom(name, &c, x(0))?;
                let w = &graph.params[pids[0]].value;
                let want = wants(node.inputs[0]);
                let (gi, gw) = ops::conv2d_backward(&geom, x(0), w.data(), &g, want);
                accumulate(&mut pgrads[pids[0]], Tensor::from_vec(w.shape(), gw).expect("weight-shaped"));
                if c.bias {
                    let gb = channel_sums(&g);
                    accumulate(
                        &mut pgrads[pids[1]],
                        Tensor::vector(gb).reshape(graph.params[pids[1]].value.shape()).expect("bias"),
                    );
                }
                if let Some(gi) = gi {
                    accumulate(&mut grads[node.inputs[0].0], gi);
                }
            }
            Op::BinConv2d { conv: c, .. } => {
                let Cache::BinConv { signs, scale } = &fwd.caches[idx] else {
                    return Err(GraphError::InvalidAttribute {
                        node: name.to_string(),
                        detail: "packed forward has no gradient".into(),
                    });
                };
                let geom = conv_geom(name, &c, x(0))?;
                let w = &graph.params[pids[0]].value;
                let per = w.shape().item_len();
                let wb: Vec<f32> = signs.iter().enumerate().map(|(i, s)| scale[i / per] * s).collect();
                let want = wants(node.inputs[0]);
                let (gi, gwb) = ops::conv2d_backward(&geom, x(0), &wb, &g, want);
                let gwb = Tensor::from_vec(w.shape(), gwb).expect("weight-shaped");
                let gw = weight_grad_ste(&gwb, scale).map_err(|e| mismatch(e.to_string()))?;
                accumulate(&mut pgrads[pids[0]], gw);
                if let Some(gi) = gi {
                    accumulate(&mut grads[node.inputs[0].0], gi);
                }
            }
            Op::BatchNorm { eps, .. } => {
                let Cache::BatchNorm { xhat, var } = &fwd.caches[idx] else { unreachable!("batch norm cache") };
                let gamma = graph.params[pids[0]].value.data();
                let (dg, db) = ops::batch_norm_param_grads(&g, xhat);
                let gi = match fwd.mode {
                    Mode::Train => ops::batch_norm_backward_train(&g, xhat, var, gamma, eps, &dg, &db),
                    Mode::Eval => ops::batch_norm_backward_eval(&g, var, gamma, eps),
                };
                let vshape = graph.params[pids[0]].value.shape();
                accumulate(&mut pgrads[pids[0]], Tensor::from_vec(vshape, dg).expect("gamma"));
                accumulate(&mut pgrads[pids[1]], Tensor::from_vec(vshape, db).expect("beta"));
                accumulate(&mut grads[node.inputs[0].0], gi);
            }
            Op::Relu => {
                let gi = x(0).zip_map(&g, |v, u| if v > 0.0 { u } else { 0.0 });
                accumulate(&mut grads[node.inputs[0].0], gi);
            }
            Op::Tanh => {
                let y = fwd.value(NodeId(idx));
                let gi = y.zip_map(&g, |t, u| u * (1.0 - t * t));
                accumulate(&mut grads[node.inputs[0].0], gi);
            }
            Op::Sign => {
                let gi = activation_grad_piecewise(x(0), &g).map_err(|e| mismatch(e.to_string()))?;
                accumulate(&mut grads[node.inputs[0].0], gi);
            }
            Op::Add => {
                for i in &node.inputs {
                    accumulate(&mut grads[i.0], g.clone());
                }
            }
            Op::JoinMean => {
                let k = 1.0 / node.inputs.len() as f32;
                for i in &node.inputs {
                    let mut gi = g.clone();
                    gi.scale_assign(k);
                    accumulate(&mut grads[i.0], gi);
                }
            }
            Op::Concat => {
                let n = g.shape().n();
                let mut off = 0;
                for i in &node.inputs {
                    let s = fwd.value(*i).shape();
                    let len = s.item_len();
                    let mut gi = Tensor::zeros(s);
                    for b in 0..n {
                        gi.item_mut(b).copy_from_slice(&g.item(b)[off..off + len]);
                    }
                    off += len;
                    accumulate(&mut grads[i.0], gi);
                }
            }
            Op::MaxPool(_) => {
                let Cache::MaxPool(arg) = &fwd.caches[idx] else { unreachable!("max pool cache") };
                accumulate(&mut grads[node.inputs[0].0], ops::max_pool_backward(x(0).shape(), arg, &g));
            }
            Op::AvgPool(p) => {
                let geom = pool_geom(name, &p, x(0))?;
                accumulate(&mut grads[node.inputs[0].0], ops::avg_pool_backward(&geom, x(0).shape(), &g));
            }
            Op::GlobalAvgPool => {
                let s = x(0).shape();
                let inv = 1.0 / s.plane() as f32;
                let gi = Tensor::from_fn(s, |i| g.data()[i / s.plane()] * inv);
                accumulate(&mut grads[node.inputs[0].0], gi);
            }
            Op::Linear { in_features, out_features, bias } => {
                let xs = x(0);
                let n = xs.shape().n();
                let w = &graph.params[pids[0]].value;
                let mut gw = vec![0.0f32; out_features * in_features];
                // dW[o, i] = Σ_n g[n, o] x[n, i]
                ops::gemm_tn(out_features, n, in_features, g.data(), xs.data(), &mut gw);
                accumulate(&mut pgrads[pids[0]], Tensor::from_vec(w.shape(), gw).expect("weight-shaped"));
                if bias {
                    let gb = channel_sums(&g);
                    accumulate(
                        &mut pgrads[pids[1]],
                        Tensor::vector(gb).reshape(graph.params[pids[1]].value.shape()).expect("bias"),
                    );
                }
                if wants(node.inputs[0]) {
                    let mut gi = Tensor::zeros(xs.shape());
                    ops::gemm_nn(n, out_features, in_features, g.data(), w.data(), gi.data_mut());
                    accumulate(&mut grads[node.inputs[0].0], gi);
                }
            }
            Op::SoftmaxCrossEntropy => {
                let Cache::Softmax(probs) = &fwd.caches[idx] else { unreachable!("softmax cache") };
                let labels = x(1);
                let s = probs.shape();
                let mut gi = probs.clone();
                for b in 0..s.n() {
                    let gb = g.data()[b];
                    let row = gi.item_mut(b);
                    row[labels.data()[b] as usize] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= gb);
                }
                accumulate(&mut grads[node.inputs[0].0], gi);
            }
        }
        grads[idx] = Some(g);
    }
    Ok(Gradients { nodes: grads, params: pgrads })
}

fn channel_sums(g: &Tensor) -> Vec<f32> {
    let s = g.shape();
    let mut out = vec![0.0f32; s.c()];
    for (i, chunk) in g.data().chunks(s.plane()).enumerate() {
        out[i % s.c()] += chunk.iter().sum::<f32>();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, ParamInit};

    fn vec4(v: &[f32]) -> Tensor {
        Tensor::from_vec(Shape::new(1, v.len(), 1, 1), v.to_vec()).unwrap()
    }

    #[test]
    fn identity_conv() {
        let mut b = GraphBuilder::new(ParamInit::Zeros);
        let x = b.input("x", 1, 2, 2).unwrap();
        let c = b.conv("c", x, 1, 1, 1, 0).unwrap();
        let mut g = b.finish(c, None);
        g.params_mut()[0].value = Tensor::full(Shape::new(1, 1, 1, 1), 1.0);
        let mut s = Session::new(g);
        let f = s.forward(&Bindings::new().with(x, Tensor::full(Shape::new(1, 1, 2, 2), 1.0)), Mode::Eval).unwrap();
        assert_eq!(f.value(c).data(), &[1.0; 4]);
    }

    #[test]
    fn join_mean_examples() {
        assert_eq!(join_mean(&[&vec4(&[2.0]), &vec4(&[4.0])]).unwrap().data(), &[3.0]);
        assert_eq!(join_mean(&[&vec4(&[1.0, 2.0]), &vec4(&[3.0, 4.0])]).unwrap().data(), &[2.0, 3.0]);
        assert_eq!(join_mean(&[&vec4(&[5.0])]).unwrap().data(), &[5.0]);
        let ones = vec4(&[1.0; 3]);
        assert_eq!(join_mean(&[&ones, &ones, &ones]).unwrap().data(), &[1.0; 3]);
        assert!(join_mean(&[]).is_err());
        assert!(join_mean(&[&vec4(&[1.0]), &vec4(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        let mut b = GraphBuilder::new(ParamInit::Zeros);
        let x = b.input("x", 3, 1, 1).unwrap();
        let y = b.add("y", &[x, x]).unwrap();
        let mut s = Session::new(b.finish(y, None));
        assert_eq!(s.backward().unwrap_err(), GraphError::NoForwardPass);
        s.forward(&Bindings::new().with(x, vec4(&[1.0, -2.0, 3.0])), Mode::Train).unwrap();
        assert_eq!(s.backward().unwrap().node(x).unwrap().data(), &[2.0; 3]);
    }

    #[test]
    fn join_mean_gradient_splits() {
        let mut b = GraphBuilder::new(ParamInit::Zeros);
        let x = b.input("x", 2, 1, 1).unwrap();
        let y = b.input("y", 2, 1, 1).unwrap();
        let j = b.join_mean("j", &[x, y]).unwrap();
        let mut s = Session::new(b.finish(j, None));
        s.forward(&Bindings::new().with(x, vec4(&[1.0, 2.0])).with(y, vec4(&[3.0, 4.0])), Mode::Train).unwrap();
        let g = s.backward().unwrap();
        assert_eq!(g.node(x).unwrap().data(), &[0.5, 0.5]);
        assert_eq!(g.node(y).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn unbound_and_mismatched_inputs() {
        let mut b = GraphBuilder::new(ParamInit::Zeros);
        let x = b.input("x", 2, 1, 1).unwrap();
        let r = b.relu("r", x).unwrap();
        let mut s = Session::new(b.finish(r, None));
        assert_eq!(s.forward(&Bindings::new(), Mode::Eval).unwrap_err(), GraphError::UnboundInput { node: "x".into() });
        let err = s.forward(&Bindings::new().with(x, vec4(&[1.0; 3])), Mode::Eval).unwrap_err();
        assert!(matches!(err, GraphError::ShapeMismatch { node, .. } if node == "x"));
    }

    #[test]
    fn sign_backward_is_piecewise_surrogate() {
        let mut b = GraphBuilder::new(ParamInit::Zeros);
        let x = b.input("x", 4, 1, 1).unwrap();
        let y = b.sign("s", x).unwrap();
        let mut s = Session::new(b.finish(y, None));
        let a = vec4(&[-0.5, 0.0, 0.25, 2.0]);
        s.forward(&Bindings::new().with(x, a.clone()), Mode::Train).unwrap();
        assert_eq!(s.last().unwrap().value(y).data(), &[-1.0, 1.0, 1.0, 1.0]);
        let g = s.backward().unwrap();
        let expect = activation_grad_piecewise(&a, &Tensor::full(a.shape(), 1.0)).unwrap();
        assert_eq!(g.node(x).unwrap(), &expect);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut b = GraphBuilder::new(ParamInit::Zeros);
        let z = b.input("z", 10, 1, 1).unwrap();
        let l = b.input("label", 1, 1, 1).unwrap();
        let loss = b.softmax_cross_entropy("loss", z, l).unwrap();
        let mut s = Session::new(b.finish(z, Some(loss)));
        let f = s
            .forward(
                &Bindings::new()
                    .with(z, Tensor::zeros(Shape::new(2, 10, 1, 1)))
                    .with(l, Tensor::from_vec(Shape::new(2, 1, 1, 1), vec![3.0, 7.0]).unwrap()),
                Mode::Train,
            )
            .unwrap();
        for &v in f.value(loss).data() {
            assert!((v - libm::logf(10.0)).abs() < 1e-6);
        }
        let bad = Bindings::new().with(z, Tensor::zeros(Shape::new(1, 10, 1, 1))).with(l, vec4(&[10.0]));
        assert!(matches!(s.forward(&bad, Mode::Eval), Err(GraphError::InvalidAttribute { .. })));
    }
}
