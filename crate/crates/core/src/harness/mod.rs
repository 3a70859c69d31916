//! Experiment configs, batch runs, metrics files and run comparison.

mod compare;
mod config;
mod run;
mod selftest;

pub use compare::{compare_runs, compare_texts, Comparison, MethodSummary};
pub use config::{DatasetSpec, ExperimentConfig, LrShape, ObjectiveSpec};
pub use run::{
    execute, final_state_text, metrics_csv, prepare_data, run_experiment, run_slices, RunArtifacts,
    RunResult, METRICS_COLUMNS, METRICS_FILE,
};
pub use selftest::{selftest, Check};
