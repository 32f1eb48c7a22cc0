//! Per-iteration metrics CSV.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppo::IterationStats;

/// One row per PPO iteration; columns in this order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub env_interactions: u64,
    pub wall_seconds: f64,
    pub fps: f64,
    pub mean_return: f64,
    pub success_rate: f64,
}

impl From<&IterationStats> for MetricsRow {
    fn from(s: &IterationStats) -> Self {
        MetricsRow {
            iteration: s.iteration,
            env_interactions: s.env_interactions,
            wall_seconds: s.wall_seconds,
            fps: s.fps,
            mean_return: s.mean_return,
            success_rate: s.success_rate,
        }
    }
}

pub const METRICS_HEADER: [&str; 6] = [
    "iteration",
    "env_interactions",
    "wall_seconds",
    "fps",
    "mean_return",
    "success_rate",
];

/// Appends rows and flushes after each one, so a killed run keeps its data.
pub struct MetricsWriter {
    w: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        w.write_record(METRICS_HEADER)?;
        w.flush()?;
        Ok(MetricsWriter { w })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.w.serialize(row)?;
        self.w.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Metrics(format!(
            "{}: expected columns {}, found {}",
            path.display(),
            METRICS_HEADER.join(","),
            header.join(",")
        )));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Metrics(format!("{} row {}: {e}", path.display(), i + 1))))
        .collect()
}
