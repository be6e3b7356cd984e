//! Experiment driver: metrics, aggregation, run settings and sweeps.

pub mod config;
pub mod metrics;
pub mod run;

pub use config::Settings;
pub use metrics::{
    aggregate, compute_cme, compute_nte, gaussian_smooth, prediction_error, reported_standard_error, standard_error,
    task_error, MethodSummary, MetricRow, Summary, TaskSummary,
};
pub use run::{
    ablation_sweep, run_experiment, run_experiment_with, run_once, Execution, ExperimentResult, RunRecord, RunSpec,
    StreamSource, SweepParam, SweepRow,
};
