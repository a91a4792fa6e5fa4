//! Per-epoch metrics CSV: `epoch,lr,train_loss,val_top1,val_top5,seconds`.
//!
//! Validation columns are error percentages and stay empty without a
//! validation set; `seconds` stays empty when timing is not recorded.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sofar_core::train::EpochStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub lr: f32,
    pub train_loss: f64,
    pub val_top1: Option<f64>,
    pub val_top5: Option<f64>,
    pub seconds: Option<f64>,
}

impl MetricsRow {
    pub fn new(stats: &EpochStats, seconds: Option<f64>) -> Self {
        MetricsRow {
            epoch: stats.epoch,
            lr: stats.lr,
            train_loss: stats.train_loss,
            val_top1: stats.val.map(|v| v.top1_error),
            val_top5: stats.val.map(|v| v.top5_error),
            seconds,
        }
    }
}

pub fn read(path: &Path) -> Result<Vec<MetricsRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

/// Rewrites `path` with `rows`, header first.
pub fn write(path: &Path, rows: &[MetricsRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["epoch", "lr", "train_loss", "val_top1", "val_top5", "seconds"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends one row, writing the header first if the file is new or empty.
pub fn append(path: &Path, row: &MetricsRow) -> Result<(), csv::Error> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row)?;
    w.flush()?;
    Ok(())
}

/// Keeps rows up to `epoch`, so a resumed run continues where its checkpoint
/// left off. A torn row from an interrupted write ends the kept prefix.
pub fn truncate_after(path: &Path, epoch: usize) -> Result<(), csv::Error> {
    let kept: Vec<MetricsRow> = if path.exists() {
        csv::Reader::from_path(path)?
            .deserialize::<MetricsRow>()
            .map_while(Result::ok)
            .filter(|r| r.epoch <= epoch)
            .collect()
    } else {
        Vec::new()
    };
    write(path, &kept)
}
