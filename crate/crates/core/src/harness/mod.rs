//! Operational surface: configuration, metrics, training/eval drivers,
//! throughput benchmark and plots.

pub mod bench;
pub mod config;
pub mod metrics;
pub mod plot;
pub mod run;

pub use config::{Mode, RunConfig};
pub use metrics::MetricsRow;
