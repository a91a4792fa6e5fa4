use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant {
        lr: f32,
    },
    /// Multiplies by `factor` at each milestone epoch passed.
    Step {
        lr: f32,
        milestones: Vec<usize>,
        factor: f32,
    },
    /// Half-cosine from `lr` at epoch 0 to `final_lr` at the last epoch.
    Cosine {
        lr: f32,
        #[serde(default)]
        final_lr: f32,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("epoch {epoch} outside 0..={epochs}")]
    EpochOutOfRange { epoch: usize, epochs: usize },
    #[error("milestones must be strictly increasing and below {epochs}")]
    BadMilestones { epochs: usize },
}

impl Schedule {
    pub fn validate(&self, epochs: usize) -> Result<(), ScheduleError> {
        if let Schedule::Step { milestones, .. } = self {
            let increasing = milestones.windows(2).all(|w| w[0] < w[1]);
            if !increasing || milestones.last().is_some_and(|&m| m >= epochs) {
                return Err(ScheduleError::BadMilestones { epochs });
            }
        }
        Ok(())
    }

    /// Learning rate for `epoch` of an `epochs`-long run. `epoch == epochs`
    /// is accepted as the end-of-run limit.
    pub fn lr_at(&self, epoch: usize, epochs: usize) -> Result<f32, ScheduleError> {
        if epoch > epochs {
            return Err(ScheduleError::EpochOutOfRange { epoch, epochs });
        }
        Ok(match self {
            Schedule::Constant { lr } => *lr,
            Schedule::Step { lr, milestones, factor } => {
                let passed = milestones.iter().filter(|&&m| epoch >= m).count();
                lr * libm::powf(*factor, passed as f32)
            }
            Schedule::Cosine { lr, final_lr } => {
                let t = epoch as f64 / epochs.max(1) as f64;
                let k = (1.0 + libm::cos(core::f64::consts::PI * t)) / 2.0;
                (*final_lr as f64 + (*lr - *final_lr) as f64 * k) as f32
            }
        })
    }
}
