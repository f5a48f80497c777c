//! Training runs, metrics persistence and run comparison.

pub mod compare;
pub mod config;
pub mod metrics;
pub mod train;

pub use compare::{compare_runs, Assertion, ComparisonReport, RunGroup, Threshold, Verdict};
pub use config::{ConfigMap, DataSource, ExperimentConfig};
pub use metrics::{read_metrics, write_metrics, MetricsRow, METRICS_HEADER};
pub use train::{evaluate_split, lr_schedule, prepare_data, run_training, train_on, RunRecord, SplitAccuracy, Tracking};
