//! Experiment orchestration: configs, seeded end-to-end runs, sweeps and
//! result files.

mod config;
mod emit;
mod run;
mod sweep;

pub use config::{apply_override, DatasetConfig, ExperimentConfig, Grid};
pub use emit::{emit, read_results_csv, write_results_csv, Deviations, Manifest, ResultRow, CSV_HEADER};
pub use run::{
    build_dataset, default_run_id, prepare_data, run_experiment, run_experiment_with_id, PreparedData, RunRecord,
    RunSummary, SplitNoise,
};
pub use sweep::{rank_runs, setting_of, sweep, workers_from_env, RunOutcome, SweepResult, WORKERS_ENV};
