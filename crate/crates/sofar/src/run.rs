//! Training and evaluation runs driven by a [`RunConfig`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sofar_core::arch::ArchSpec;
use sofar_core::train::{
    Checkpoint, EpochStats, EvalError, EvalResult, ImageSet, OptimizerConfig, Schedule, TrainConfig, TrainError,
    Trainer,
};

use crate::checkpoint::{self, CheckpointError};
use crate::config::{ConfigError, RunConfig, RESOLVED_NAME};
use crate::data::{DataError, Format};
use crate::metrics::{self, MetricsRow};

pub const METRICS_NAME: &str = "metrics.csv";
pub const CHECKPOINT_NAME: &str = "checkpoint.sofa";

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// Golden comparison outside tolerance, or an unexpected failure.
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const DIVERGENCE: u8 = 3;
    pub const DATA: u8 = 4;
    pub const KERNEL: u8 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error("{0}")]
    Train(#[from] TrainError),
    #[error("metrics: {0}")]
    Metrics(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => exit::CONFIG,
            RunError::Data(_) | RunError::Checkpoint { .. } => exit::DATA,
            RunError::Train(t) => match t {
                TrainError::Divergence { .. } => exit::DIVERGENCE,
                TrainError::DataShape { .. } | TrainError::Eval(EvalError::Empty) => exit::DATA,
                TrainError::Config(_)
                | TrainError::ArchMismatch { .. }
                | TrainError::Finished(_)
                | TrainError::Arch(_)
                | TrainError::Schedule(_) => exit::CONFIG,
                _ => exit::FAILURE,
            },
            RunError::Metrics(_) | RunError::Io { .. } => exit::FAILURE,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, RunError> {
    checkpoint::load(path).map_err(|source| RunError::Checkpoint { path: path.into(), source })
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    /// Stats of the epochs run by this invocation.
    pub epochs: Vec<EpochStats>,
}

/// Per-epoch checkpoint name inside the output directory.
pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:03}.sofa")
}

fn build_trainer(cfg: &RunConfig, arch: &ArchSpec, resume: Option<&Path>) -> Result<Trainer, RunError> {
    if let Some(path) = resume {
        let ckpt = load_checkpoint(path)?;
        return Ok(Trainer::resume(arch, &ckpt, cfg.train.clone())?);
    }
    if let Some(path) = &cfg.init {
        let init = load_checkpoint(path)?;
        Trainer::new(arch, cfg.train.clone())?.check_init(&init)?;
        return Ok(Trainer::from_weights(&init, cfg.train.clone())?);
    }
    Ok(Trainer::new(arch, cfg.train.clone())?)
}

/// Runs the configured phase to its last epoch, writing the resolved config,
/// one checkpoint per epoch and the metrics CSV into `out_dir`.
pub fn train(cfg: &RunConfig, resume: Option<&Path>, log: &mut dyn Write) -> Result<RunSummary, RunError> {
    let resolved = cfg.resolve()?;
    let arch = resolved.arch()?;
    let (train_set, val_set) = resolved.data.load(arch.num_classes)?;
    let mut trainer = build_trainer(&resolved, &arch, resume)?;

    let out = resolved.out_dir.clone();
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let run_toml = out.join(RESOLVED_NAME);
    let text = resolved.to_toml().map_err(ConfigError::from)?;
    checkpoint::write_atomic(&run_toml, text.as_bytes()).map_err(io_err(&run_toml))?;
    let metrics_path = out.join(METRICS_NAME);
    metrics::truncate_after(&metrics_path, trainer.epoch())?;

    let ckpt_path = out.join(CHECKPOINT_NAME);
    let mut epochs = Vec::new();
    let _ = writeln!(
        log,
        "{}: {:?}, {} train / {} val samples, epochs {}..={}",
        arch.name(),
        resolved.train.phase,
        train_set.len(),
        val_set.as_ref().map_or(0, ImageSet::len),
        trainer.epoch() + 1,
        resolved.train.epochs
    );
    while trainer.epoch() < resolved.train.epochs {
        let start = Instant::now();
        let stats = trainer.run_epoch(&train_set, val_set.as_ref())?;
        let seconds = start.elapsed().as_secs_f64();
        metrics::append(&metrics_path, &MetricsRow::new(&stats, resolved.record_seconds.then_some(seconds)))?;
        let bytes = checkpoint::encode(&trainer.checkpoint());
        for p in [out.join(epoch_checkpoint_name(stats.epoch)), ckpt_path.clone()] {
            checkpoint::write_atomic(&p, &bytes).map_err(io_err(&p))?;
        }
        let val =
            stats.val.map_or(String::new(), |v| format!(", val top-1 {:.2}% top-5 {:.2}%", v.top1_error, v.top5_error));
        let _ = writeln!(
            log,
            "epoch {} lr {:.3e} loss {:.4}{val} ({seconds:.1}s)",
            stats.epoch, stats.lr, stats.train_loss
        );
        epochs.push(stats);
    }
    Ok(RunSummary { out_dir: out, checkpoint: ckpt_path, metrics: metrics_path, epochs })
}

/// Top-1/top-5 error of a checkpoint on one dataset file.
pub fn evaluate(
    ckpt: &Checkpoint,
    format: Format,
    data: &Path,
    labels: Option<&Path>,
    batch_size: usize,
) -> Result<EvalResult, RunError> {
    let set = crate::config::load_set(format, data, labels, ckpt.arch.num_classes)?;
    let config = TrainConfig {
        phase: ckpt.phase,
        optimizer: OptimizerConfig::SgdMomentum { momentum: 0.0, weight_decay: 0.0 },
        schedule: Schedule::Constant { lr: 0.0 },
        epochs: ckpt.epoch.max(1),
        batch_size,
        seed: 0,
        augment: false,
        recalibrate_norm: false,
    };
    let trainer = Trainer::resume(&ckpt.arch, ckpt, config)?;
    Ok(trainer.evaluate(&set)?)
}
