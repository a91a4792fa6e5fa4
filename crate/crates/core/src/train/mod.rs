//! Desk-scale training: optimizers, learning-rate schedules, in-memory
//! datasets, top-k evaluation and the epoch loop.

mod data;
mod eval;
mod optim;
mod schedule;
mod trainer;

pub use data::{epoch_order, Augment, DataError, ImageSet};
pub use eval::{evaluate, label_rank, EvalError, EvalResult, TopK};
pub use optim::{adam_step, sgd_momentum_step, AdamHyper, OptimShapeError, OptimizerConfig, OptimizerState};
pub use schedule::{Schedule, ScheduleError};
pub use trainer::{precision_violations, Checkpoint, EpochStats, Phase, TrainConfig, TrainError, Trainer};
