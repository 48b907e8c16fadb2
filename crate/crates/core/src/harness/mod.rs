//! The benchmark grid: systems × noise × duration × method × repetition.
//!
//! Each trial simulates training trajectories, adds noise, estimates
//! derivatives with one method, fits an ensemble of fixed-sparsity models to
//! the pooled data and scores the result against the true system. Trial keys
//! and random seeds are digests of the trial's parameters, so any subset of
//! the grid can be rerun or resumed and produces the same rows.

mod config;
mod grid;
mod report;
mod trial;

pub use config::{canonical_json, ExperimentConfig, Method, MethodGrids, Pooling, SparsityMode, TrialSpec};
pub use grid::{
    read_log, read_manifest, read_results_csv, run_grid, write_results_csv, Manifest, COLUMNS, LOG_FILE, MANIFEST_FILE,
    RESULTS_FILE,
};
pub use report::{report, summarize, write_summary, ReportFiles, SummaryRow, Sweep, EXPORT_CELL};
pub use trial::{run_trial, run_trial_detailed, TrajectoryData, TrialOutcome, TrialRecord};
