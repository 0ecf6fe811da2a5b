//! Per-epoch metric rows and their CSV form.

use std::path::Path;

use crate::error::Result;

pub const METRICS_HEADER: &str = "epoch,batch_count,lr,train_loss,val_loss,val_error,wall_seconds";

/// One row per completed epoch. `batch_count` is cumulative over the run,
/// `lr` is the schedule value after the epoch's last batch, and
/// `wall_seconds` counts from the start of the current `fit` call.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: u64,
    pub batch_count: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_error: f64,
    pub wall_seconds: f64,
}

impl MetricRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.batch_count,
            self.lr,
            self.train_loss,
            self.val_loss,
            self.val_error,
            self.wall_seconds
        )
    }

    /// Bit-level equality of everything except `wall_seconds`, the one
    /// column timing noise is allowed to touch.
    pub fn same_numbers(&self, other: &MetricRow) -> bool {
        self.epoch == other.epoch
            && self.batch_count == other.batch_count
            && self.lr.to_bits() == other.lr.to_bits()
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.val_loss.to_bits() == other.val_loss.to_bits()
            && self.val_error.to_bits() == other.val_error.to_bits()
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
