//! Optimizer runs, comparison metrics and report export.

pub mod config;
mod metrics;
mod report;
mod run;

pub use config::{ExperimentConfig, OptimizerEntry, OptimizerKind, TaskSource};
pub use metrics::{
    compute_tf, index_ia, index_table, median, win_tie, win_tie_table, Clock, IndexEntry,
    IndexVariant, WinTie, WinTieRow,
};
pub use report::{
    export_report, read_summary, read_traces, summarize, write_summary, write_traces,
    ReportOptions, RunSummary, Summary, TimeToPrecision, SUMMARY_FILE, TRACE_FILE, TRACE_HEADER,
};
pub use run::{
    instance_label, run_all, run_lbfgs_with_rule, run_optimizer, IterRecord, OptimizerSpec,
    RunRecord, RunStatus, StopCriteria, DEFAULT_ADAM_LR, DEFAULT_RMSPROP_LR,
};
