//! Run metrics and their CSV form.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Bumped whenever a CSV column is added, removed or reordered.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// One evaluation point of a DPSGD run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub wall_clock_s: f64,
    pub t: u64,
    pub grad_norm_sq: f64,
    pub loss: f64,
    pub v_norm: f64,
    pub messages_sent: u64,
    pub effective_gradients: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rows: Vec<MetricsRow>,
    /// Staleness of every applied update, in master iterations.
    pub staleness_hist: BTreeMap<u64, u64>,
    /// PUSH messages the master received before it shut down.
    pub pushes_received: u64,
    pub pushes_applied: u64,
    /// Updates discarded because they exceeded the staleness bound.
    pub dropped_stale: u64,
    /// Applied updates over the bound while enforcement was off.
    pub staleness_violations: u64,
    pub pulls_served: u64,
    pub malformed_frames: u64,
    pub elapsed_s: f64,
}

impl Metrics {
    pub fn max_applied_staleness(&self) -> u64 {
        self.staleness_hist.keys().next_back().copied().unwrap_or(0)
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.rows)
    }
}

pub fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
