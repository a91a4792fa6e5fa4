use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{epoch_order, Augment, ImageSet};
use super::eval::{evaluate, EvalError, EvalResult};
use super::optim::{OptimShapeError, OptimizerConfig, OptimizerState};
use super::schedule::{Schedule, ScheduleError};
use crate::arch::{assemble_training_network, ArchError, ArchSpec, BlockPrecision};
use crate::graph::{Bindings, ExecOptions, Graph, GraphError, Mode, NodeId, Op, ParamInit, Precision, Region, Session};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Full-precision network with `Tanh` on convolution inputs.
    PretrainFp,
    /// Binary network initialized from a full-precision checkpoint.
    FinetuneBin,
    /// Binary network trained from a fresh initialization.
    ScratchBin,
}

impl Phase {
    pub fn precision(self) -> BlockPrecision {
        match self {
            Phase::PretrainFp => BlockPrecision::Full,
            Phase::FinetuneBin | Phase::ScratchBin => BlockPrecision::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Random crop with 4-pixel padding and horizontal flip.
    #[serde(default)]
    pub augment: bool,
    /// Recompute batch-norm running statistics over the training set at the
    /// end of every epoch (see [`Trainer::recalibrate_norm`]).
    #[serde(default)]
    pub recalibrate_norm: bool,
}

impl TrainConfig {
    /// Full-precision ResNet pretraining: momentum 0.9, weight decay 1e-4,
    /// lr 0.1 decayed ×0.1 at epochs 30/60/90 of 100.
    pub fn resnet_pretrain() -> Self {
        TrainConfig {
            phase: Phase::PretrainFp,
            optimizer: OptimizerConfig::SgdMomentum { momentum: 0.9, weight_decay: 1e-4 },
            schedule: Schedule::Step { lr: 0.1, milestones: vec![30, 60, 90], factor: 0.1 },
            epochs: 100,
            batch_size: 256,
            seed: 0,
            augment: true,
            recalibrate_norm: false,
        }
    }

    /// Binary ResNet finetuning: Adam without weight decay, lr 5e-4 decayed
    /// ×0.1 at epochs 30/40 of 50.
    pub fn resnet_finetune() -> Self {
        TrainConfig {
            phase: Phase::FinetuneBin,
            optimizer: OptimizerConfig::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 },
            schedule: Schedule::Step { lr: 5e-4, milestones: vec![30, 40], factor: 0.1 },
            epochs: 50,
            batch_size: 256,
            seed: 0,
            augment: true,
            recalibrate_norm: true,
        }
    }

    /// Binary DenseNet from scratch: Adam, cosine from 0.002 to 0 over 100 epochs.
    pub fn densenet_scratch() -> Self {
        TrainConfig {
            phase: Phase::ScratchBin,
            optimizer: OptimizerConfig::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 },
            schedule: Schedule::Cosine { lr: 0.002, final_lr: 0.0 },
            epochs: 100,
            batch_size: 256,
            seed: 0,
            augment: true,
            recalibrate_norm: true,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        self.schedule.validate(self.epochs)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize, loss: f32 },
    #[error("checkpoint architecture '{found}' does not match '{expected}'")]
    ArchMismatch { expected: String, found: String },
    #[error("dataset item shape {found:?} does not match network input {expected:?}")]
    DataShape { expected: [usize; 3], found: [usize; 3] },
    #[error("run already finished all {0} epochs")]
    Finished(usize),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Optim(#[from] OptimShapeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    pub phase: Phase,
    /// Completed epochs.
    pub epoch: usize,
    /// Named parameters, including batch-norm running statistics.
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f32,
    /// Mean per-sample loss over the epoch's training batches.
    pub train_loss: f64,
    pub val: Option<EvalResult>,
}

/// Network ids and parameters owned by one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    arch: ArchSpec,
    config: TrainConfig,
    session: Session,
    input: NodeId,
    labels: NodeId,
    logits: NodeId,
    loss: NodeId,
    optimizer: OptimizerState,
    epoch: usize,
}

/// True when two specs describe the same network up to block precision.
fn same_network(a: &ArchSpec, b: &ArchSpec) -> bool {
    ArchSpec { precision: a.precision, ..b.clone() } == *a
}

impl Trainer {
    pub fn new(arch: &ArchSpec, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let arch = ArchSpec { precision: config.phase.precision(), ..arch.clone() };
        let net = assemble_training_network(&arch, ParamInit::Seeded(config.seed))?;
        let optimizer = OptimizerState::new(&config.optimizer, net.graph.params());
        let options = ExecOptions { packed_binary: false, input_grads: false };
        Ok(Trainer {
            arch,
            config,
            session: Session::with_options(net.graph, options),
            input: net.input,
            labels: net.labels,
            logits: net.logits,
            loss: net.loss,
            optimizer,
            epoch: 0,
        })
    }

    /// Starts a new phase from another run's weights (e.g. finetuning a
    /// pretrained model); optimizer state and epoch count start fresh.
    pub fn from_weights(init: &Checkpoint, config: TrainConfig) -> Result<Self, TrainError> {
        let mut t = Trainer::new(&init.arch, config)?;
        t.load_params(&init.params);
        Ok(t)
    }

    /// Continues the run recorded in `ckpt`.
    pub fn resume(arch: &ArchSpec, ckpt: &Checkpoint, config: TrainConfig) -> Result<Self, TrainError> {
        if !same_network(arch, &ckpt.arch) || ckpt.phase != config.phase {
            return Err(TrainError::ArchMismatch { expected: arch.name(), found: ckpt.arch.name() });
        }
        let mut t = Trainer::new(arch, config)?;
        t.load_params(&ckpt.params);
        if let Some(state) = &ckpt.optimizer {
            t.optimizer = state.clone();
        }
        t.epoch = ckpt.epoch;
        Ok(t)
    }

    /// Requires `init` to describe the same network as this trainer.
    pub fn check_init(&self, init: &Checkpoint) -> Result<(), TrainError> {
        if !same_network(&self.arch, &init.arch) {
            return Err(TrainError::ArchMismatch { expected: self.arch.name(), found: init.arch.name() });
        }
        Ok(())
    }

    fn load_params(&mut self, params: &[(String, Tensor)]) -> usize {
        let graph = self.session.graph_mut();
        let mut copied = 0;
        for (name, value) in params {
            if let Some(i) = graph.param_index(name) {
                let p = &mut graph.params_mut()[i];
                if p.value.shape() == value.shape() {
                    p.value = value.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn graph(&self) -> &Graph {
        self.session.graph()
    }

    pub fn input(&self) -> NodeId {
        self.input
    }

    pub fn logits(&self) -> NodeId {
        self.logits
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            arch: self.arch.clone(),
            phase: self.config.phase,
            epoch: self.epoch,
            params: self.graph().params().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            optimizer: Some(self.optimizer.clone()),
        }
    }

    fn check_data(&self, set: &ImageSet) -> Result<(), TrainError> {
        let expected = self.graph().item_shape(self.input);
        if set.item_shape() != expected {
            return Err(TrainError::DataShape { expected, found: set.item_shape() });
        }
        if set.classes() > self.arch.num_classes {
            return Err(TrainError::Config("dataset has more classes than the classifier".into()));
        }
        Ok(())
    }

    /// Mean per-sample loss over `set` with batch statistics and no updates.
    pub fn mean_loss(&self, set: &ImageSet) -> Result<f64, TrainError> {
        self.check_data(set)?;
        let mut probe = self.session.clone();
        let indices: Vec<usize> = (0..set.len()).collect();
        let mut total = 0.0f64;
        for chunk in indices.chunks(self.config.batch_size) {
            let (x, y) = set.batch::<ChaCha8Rng>(chunk, None);
            let fwd = probe.forward(&Bindings::new().with(self.input, x).with(self.labels, y), Mode::Train)?;
            total += fwd.value(self.loss).sum();
        }
        Ok(total / set.len().max(1) as f64)
    }

    /// Replaces batch-norm running statistics with their average over the
    /// batches of `set` under the current weights. Binary layers flip signs
    /// between steps, so the moving averages collected during training can
    /// lag the final weights.
    pub fn recalibrate_norm(&mut self, set: &ImageSet) -> Result<(), TrainError> {
        self.check_data(set)?;
        let indices: Vec<usize> = (0..set.len()).collect();
        for (k, chunk) in indices.chunks(self.config.batch_size).enumerate() {
            let (x, y) = set.batch::<ChaCha8Rng>(chunk, None);
            self.session.accumulate_norm_stats(&Bindings::new().with(self.input, x).with(self.labels, y), k + 1)?;
        }
        Ok(())
    }

    pub fn evaluate(&self, set: &ImageSet) -> Result<EvalResult, TrainError> {
        self.check_data(set)?;
        let opts = ExecOptions { packed_binary: false, input_grads: false };
        Ok(evaluate(self.graph(), self.input, self.logits, set, self.config.batch_size, opts)?)
    }

    /// One pass over `train` in a seed-determined order, then optional validation.
    pub fn run_epoch(&mut self, train: &ImageSet, val: Option<&ImageSet>) -> Result<EpochStats, TrainError> {
        if self.epoch >= self.config.epochs {
            return Err(TrainError::Finished(self.config.epochs));
        }
        self.check_data(train)?;
        if train.is_empty() {
            return Err(TrainError::Eval(EvalError::Empty));
        }
        let lr = self.config.schedule.lr_at(self.epoch, self.config.epochs)?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.config.seed ^ (self.epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let order = epoch_order(train.len(), &mut rng);
        let mut total = 0.0f64;
        for (step, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let aug = self.config.augment.then_some(Augment::STANDARD);
            let (x, y) = match aug {
                Some(a) => train.batch(chunk, Some((a, &mut rng))),
                None => train.batch::<ChaCha8Rng>(chunk, None),
            };
            let fwd = self.session.forward(&Bindings::new().with(self.input, x).with(self.labels, y), Mode::Train)?;
            let losses = fwd.value(self.loss);
            let batch_loss = losses.sum();
            if !batch_loss.is_finite() {
                return Err(TrainError::Divergence { epoch: self.epoch + 1, step, loss: batch_loss as f32 });
            }
            total += batch_loss;
            let seed = Tensor::full(losses.shape(), 1.0 / chunk.len() as f32);
            let grads = self.session.backward_from(self.loss, seed)?.into_params();
            let params = self.session.graph_mut().params_mut();
            self.optimizer.apply(&self.config.optimizer, params, &grads, lr)?;
        }
        self.epoch += 1;
        if self.config.recalibrate_norm {
            self.recalibrate_norm(train)?;
        }
        let val = match val {
            Some(v) => Some(self.evaluate(v)?),
            None => None,
        };
        Ok(EpochStats { epoch: self.epoch, lr, train_loss: total / train.len() as f64, val })
    }
}

/// Nodes that break the precision policy: binary layers outside blocks, or
/// full-precision convolutions inside blocks.
pub fn precision_violations(graph: &Graph) -> Vec<NodeId> {
    graph
        .ids()
        .filter(|&id| {
            let n = graph.node(id);
            let in_block = matches!(n.region, Region::Block { .. });
            match n.op.precision() {
                Precision::Binary => !in_block,
                Precision::Full => in_block && matches!(n.op, Op::Conv2d(_)),
            }
        })
        .collect()
}
