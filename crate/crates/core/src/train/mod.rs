//! Optimization, metrics, training loops and hyperparameter sweeps.

pub mod config;
pub mod metrics;
pub mod optim;
mod run;
pub mod sweep;

pub use config::{LossKind, TrainConfig};
pub use optim::{lr_at, Adam};
pub use run::{
    evaluate, higher_is_better, is_better, train_task, write_metrics_csv, write_timing_csv, MetricsRecord,
    SplitMetrics, TrainOutcome, METRICS_HEADER,
};
