//! Run configuration, metrics and the artefacts of a training run.

pub mod artifacts;
pub mod config;
pub mod metrics;
mod run;

pub use config::{derive_seed, DataSource, RunConfig, SeedStream};
pub use metrics::{
    accuracy, classify_noisy, detection_metrics, mask_indices, DetectionMetrics, ThresholdChoice,
};
pub use run::{
    detect_noise, eval_run, prepare, report_path, run_experiment, train_in_memory, DumpPoint,
    EvalReport, Prepared, RunReport, RunStatus, SnapshotSummary, Verdicts, REPORT_VERSION,
};
