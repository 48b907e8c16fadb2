use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method, TrialSpec};
use super::trial::{run_trial_detailed, TrialRecord};
use crate::error::{config, Result};
use crate::io::Table;
use crate::sindy::{median, simulate_model};
use crate::systems::{integrate, SystemKind};

/// Noise and duration of the cell whose trajectories are exported.
pub const EXPORT_CELL: (f64, f64) = (0.1, 8.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    Noise,
    Duration,
}

/// Medians over the successful trials of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep: Sweep,
    pub system: SystemKind,
    pub method: Method,
    pub noise: f64,
    pub duration: f64,
    pub n_trials: usize,
    pub n_failed: usize,
    pub median_f1: Option<f64>,
    pub median_mae: Option<f64>,
    pub median_support_mae: Option<f64>,
    pub median_sim_rmse: Option<f64>,
    /// No successful trial in this cell.
    pub missing: bool,
}

fn median_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().filter(|x| x.is_finite()).collect();
    (!v.is_empty()).then(|| median(&v))
}

/// One row per (system, method, grid value) of a sweep.
pub fn summarize(cfg: &ExperimentConfig, records: &[TrialRecord], sweep: Sweep) -> Vec<SummaryRow> {
    let cells: Vec<(f64, f64)> = match sweep {
        Sweep::Noise => cfg.noise_grid.iter().map(|&n| (n, cfg.default_duration)).collect(),
        Sweep::Duration => cfg.duration_grid.iter().map(|&d| (cfg.default_noise, d)).collect(),
    };
    let mut rows = Vec::new();
    for &system in &cfg.systems {
        for &method in &cfg.methods {
            for &(noise, duration) in &cells {
                let trials: Vec<&TrialRecord> = records
                    .iter()
                    .filter(|r| r.system == system && r.method == method && r.noise == noise && r.duration == duration)
                    .collect();
                let ok: Vec<&&TrialRecord> = trials.iter().filter(|r| r.error.is_none()).collect();
                rows.push(SummaryRow {
                    sweep,
                    system,
                    method,
                    noise,
                    duration,
                    n_trials: trials.len(),
                    n_failed: trials.len() - ok.len(),
                    median_f1: median_of(ok.iter().map(|r| r.f1)),
                    median_mae: median_of(ok.iter().map(|r| r.mae)),
                    median_support_mae: median_of(ok.iter().map(|r| r.support_mae)),
                    median_sim_rmse: median_of(ok.iter().map(|r| r.sim_rmse)),
                    missing: ok.is_empty(),
                });
            }
        }
    }
    rows
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record([
            "sweep",
            "system",
            "method",
            "noise",
            "duration",
            "n_trials",
            "n_failed",
            "median_f1",
            "median_mae",
            "median_support_mae",
            "median_sim_rmse",
            "missing",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Files written by [`report`].
#[derive(Debug, Clone, Default)]
pub struct ReportFiles {
    pub summaries: Vec<PathBuf>,
    pub trajectories: Vec<PathBuf>,
}

/// Summary tables by noise and by duration, and (optionally) smoothed and
/// simulated trajectories of every trial in the export cell. Exports rerun
/// the trial, which reproduces it exactly.
pub fn report(
    cfg: &ExperimentConfig,
    records: &[TrialRecord],
    out_dir: &Path,
    export_trajectories: bool,
) -> Result<ReportFiles> {
    if records.is_empty() {
        return Err(config("no results to report"));
    }
    fs::create_dir_all(out_dir)?;
    let mut files = ReportFiles::default();
    for (sweep, name) in [
        (Sweep::Noise, "summary_noise.csv"),
        (Sweep::Duration, "summary_duration.csv"),
    ] {
        let path = out_dir.join(name);
        write_summary(&path, &summarize(cfg, records, sweep))?;
        files.summaries.push(path);
    }
    if export_trajectories {
        let dir = out_dir.join("trajectories");
        for r in records {
            if (r.noise, r.duration) != EXPORT_CELL || r.error.is_some() {
                continue;
            }
            fs::create_dir_all(&dir)?;
            let spec = TrialSpec {
                system: r.system,
                method: r.method,
                noise: r.noise,
                duration: r.duration,
                trial_index: r.trial_index,
            };
            files.trajectories.extend(export_trial(cfg, &spec, &dir)?);
        }
    }
    Ok(files)
}

/// The first training trajectory (truth, measurements, estimates) and the
/// simulation from the first test initial condition.
fn export_trial(cfg: &ExperimentConfig, spec: &TrialSpec, dir: &Path) -> Result<Vec<PathBuf>> {
    let outcome = run_trial_detailed(cfg, spec)?;
    let stem = format!("{}__{}__{}", spec.system, spec.method, spec.trial_index);
    let mut written = Vec::new();
    if let Some(first) = outcome.trajectories.first() {
        let mut t = Table::new();
        t.push("t", first.truth.times.clone());
        t.push_rows("x_true", &first.truth.states);
        t.push_rows("dx_true", &first.truth.derivatives);
        t.push_rows("z", &first.measurements.observations);
        t.push_rows("x_hat", &first.smoothed.states_hat);
        t.push_rows("dx_hat", &first.smoothed.derivatives_hat);
        let path = dir.join(format!("{stem}__smoothed.csv"));
        t.write(&path)?;
        written.push(path);
    }
    if let Some(x0) = outcome.test_ics.first() {
        let system = crate::systems::OdeSystem::new(spec.system);
        let truth = integrate(&system, x0, cfg.simulation_duration, cfg.dt)?;
        let sim = simulate_model(&outcome.coefficients, x0, cfg.simulation_duration, cfg.dt)?;
        let mut t = Table::new();
        t.push("t", truth.times.clone());
        t.push_rows("x_true", &truth.states);
        t.push_rows("x_sim", &sim.trajectory.states);
        let path = dir.join(format!("{stem}__simulated.csv"));
        t.write(&path)?;
        written.push(path);
    }
    Ok(written)
}
