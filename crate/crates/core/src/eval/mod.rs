//! Metrics, evaluation tasks and the ablation harness.

mod metrics;
mod tasks;

pub use metrics::*;
pub use tasks::*;
