use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::data::ImageSet;
use crate::graph::{infer, Bindings, ExecOptions, Graph, GraphError, NodeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Percent of samples whose label is not the top prediction.
    pub top1_error: f64,
    /// Percent of samples whose label is not among the five best predictions.
    pub top5_error: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty dataset")]
    Empty,
    #[error("batch size must be positive")]
    BatchSize,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Zero-based rank of `label` when classes are sorted by descending score.
/// Equal scores are ordered by ascending class index.
pub fn label_rank(scores: &[f32], label: usize) -> usize {
    let s = scores[label];
    scores.iter().enumerate().filter(|&(j, &v)| v > s || (v == s && j < label)).count()
}

/// Accumulates top-1 and top-5 hits over batches of logits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TopK {
    pub n: usize,
    pub top1: usize,
    pub top5: usize,
}

impl TopK {
    pub fn add(&mut self, logits: &Tensor, labels: &[u32]) {
        for (b, &label) in labels.iter().enumerate() {
            let r = label_rank(logits.item(b), label as usize);
            self.n += 1;
            self.top1 += usize::from(r < 1);
            self.top5 += usize::from(r < 5);
        }
    }

    pub fn result(&self) -> Result<EvalResult, EvalError> {
        if self.n == 0 {
            return Err(EvalError::Empty);
        }
        let pct = |hits: usize| 100.0 * (self.n - hits) as f64 / self.n as f64;
        Ok(EvalResult { top1_error: pct(self.top1), top5_error: pct(self.top5), n: self.n })
    }
}

/// Single-crop evaluation in eval mode, in dataset order.
pub fn evaluate(
    graph: &Graph,
    input: NodeId,
    logits: NodeId,
    set: &ImageSet,
    batch_size: usize,
    opts: ExecOptions,
) -> Result<EvalResult, EvalError> {
    if set.is_empty() {
        return Err(EvalError::Empty);
    }
    if batch_size == 0 {
        return Err(EvalError::BatchSize);
    }
    let mut acc = TopK::default();
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (x, _) = set.batch::<rand_chacha::ChaCha8Rng>(chunk, None);
        let fwd = infer(graph, &Bindings::new().with(input, x), logits, opts)?;
        let labels: Vec<u32> = chunk.iter().map(|&i| set.labels()[i]).collect();
        acc.add(fwd.value(logits), &labels);
    }
    acc.result()
}
