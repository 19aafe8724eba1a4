//! Experiment configs, scenario timelines, metrics and their CSV/JSON output.

mod config;
mod metrics;
mod run;

pub use config::{apply_override, DatasetSpec, Detection, ExperimentConfig, Strategy};
pub use metrics::{
    aggregate, compute_attack_success, emit_csv, emit_events, emit_summary_json, read_csv,
    read_summary_json, storage_report, write_json, write_rows, MetricsReport, RoundMetrics,
    StorageModel, StrategyAggregate, Summary, UnlearnSummary,
};
pub use run::{build_scenario, run_experiment, run_scenario, run_sweep, Scenario};
