use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::trial::{run_trial, TrialRecord};
use crate::error::{config, Result};

/// Append-only log, one JSON record per line, including wall time.
pub const LOG_FILE: &str = "results.jsonl";
/// Canonical table: sorted by trial key, without wall time.
pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Column order of the results table.
pub const COLUMNS: [&str; 19] = [
    "trial_key",
    "system",
    "method",
    "noise",
    "duration",
    "trial_index",
    "seed",
    "oracle_selected",
    "hyperparameter",
    "hyperparameter_value",
    "smoother_converged",
    "f1",
    "mae",
    "support_mae",
    "sim_rmse",
    "n_diverged",
    "bounded",
    "rank_deficient",
    "error",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub code_version: String,
    /// RFC 3339, UTC.
    pub timestamp: String,
    pub n_planned: usize,
    pub n_records: usize,
    pub n_failed: usize,
    pub config: ExperimentConfig,
}

#[derive(Serialize, Deserialize)]
struct LogEntry {
    #[serde(flatten)]
    record: TrialRecord,
    wall_time: f64,
}

/// Records in an existing log. A torn final line from an interrupted run is skipped.
pub fn read_log(path: &Path) -> Result<Vec<TrialRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(entry) = serde_json::from_str::<LogEntry>(&line) {
            let mut r = entry.record;
            r.wall_time = entry.wall_time;
            out.push(r);
        }
    }
    Ok(out)
}

pub fn write_results_csv(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let records = rd.deserialize().collect::<std::result::Result<Vec<TrialRecord>, _>>()?;
    Ok(records)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
}

/// Run every planned trial that `out_dir` does not already hold.
///
/// Trials run on the rayon pool; each finished record is appended to the log
/// at once, so an interrupted run loses only trials in flight. The canonical
/// table and manifest are rewritten from the log at the end. An existing log
/// is only extended when `resume` is set and it came from the same config.
pub fn run_grid(cfg: &ExperimentConfig, out_dir: &Path, resume: bool) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join(LOG_FILE);
    let digest = cfg.digest();

    let mut done: BTreeMap<String, TrialRecord> = BTreeMap::new();
    if log_path.exists() {
        if !resume {
            return Err(config(format!(
                "{} already holds results; resume or choose a fresh directory",
                out_dir.display()
            )));
        }
        if let Ok(m) = read_manifest(out_dir) {
            if m.config_digest != digest {
                return Err(config("existing results come from a different configuration"));
            }
        }
        for r in read_log(&log_path)? {
            done.entry(r.trial_key.clone()).or_insert(r);
        }
    }

    let plan = cfg.plan();
    let planned: HashSet<String> = plan.iter().map(|s| cfg.trial_key(s)).collect();
    let pending: Vec<_> = plan.iter().filter(|s| !done.contains_key(&cfg.trial_key(s))).collect();

    let mut file = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(&log_path)?;
    // start on a fresh line if an interrupted write left a partial one
    if file.metadata()?.len() > 0 {
        let mut last = [0u8; 1];
        file.seek(SeekFrom::End(-1))?;
        file.read_exact(&mut last)?;
        if last[0] != b'\n' {
            file.write_all(b"\n")?;
        }
    }
    let log = Mutex::new(file);
    let fresh: Vec<TrialRecord> = pending
        .par_iter()
        .map(|spec| {
            let record = run_trial(cfg, spec);
            let entry = LogEntry {
                wall_time: record.wall_time,
                record,
            };
            let line = serde_json::to_string(&entry)?;
            let mut f = log.lock().expect("log writer poisoned");
            writeln!(f, "{line}")?;
            f.flush()?;
            Ok(entry.record)
        })
        .collect::<Result<_>>()?;

    for r in fresh {
        done.entry(r.trial_key.clone()).or_insert(r);
    }
    let records: Vec<TrialRecord> = done.into_values().filter(|r| planned.contains(&r.trial_key)).collect();
    write_results_csv(&out_dir.join(RESULTS_FILE), &records)?;
    let manifest = Manifest {
        config_digest: digest,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        n_planned: plan.len(),
        n_records: records.len(),
        n_failed: records.iter().filter(|r| r.error.is_some()).count(),
        config: cfg.clone(),
    };
    fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(records)
}
