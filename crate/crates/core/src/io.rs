//! CSV and JSON files exchanged by the command-line tools.
//!
//! Tables are plain CSV with a header row and one column per quantity. Missing
//! values (for example a simulation that stopped early) are empty cells.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{config, input, Result};
use crate::smoothing::SmoothResult;
use crate::systems::{MeasurementSet, NoiseRule, OdeSystem, Trajectory};

/// Column-oriented numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    /// Columns may be shorter than the table; the gap reads as empty cells.
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new() -> Self {
        Self {
            header: Vec::new(),
            columns: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.header.push(name.into());
        self.columns.push(values);
    }

    pub fn push_rows(&mut self, prefix: &str, m: &DMatrix<f64>) {
        for (r, row) in m.row_iter().enumerate() {
            self.push(format!("{prefix}{}", r + 1), row.iter().copied().collect());
        }
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }

    /// Rows of the matrix built from `prefix1`, `prefix2`, ... columns.
    pub fn rows_with_prefix(&self, prefix: &str) -> Option<DMatrix<f64>> {
        let mut cols = Vec::new();
        while let Some(c) = self.column(&format!("{prefix}{}", cols.len() + 1)) {
            cols.push(c);
        }
        if cols.is_empty() {
            return None;
        }
        let m = cols[0].len();
        if cols.iter().any(|c| c.len() != m) {
            return None;
        }
        Some(DMatrix::from_fn(cols.len(), m, |r, i| cols[r][i]))
    }

    pub fn n_rows(&self) -> usize {
        self.columns.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for i in 0..self.n_rows() {
            w.write_record(
                self.columns
                    .iter()
                    .map(|c| c.get(i).map(|v| v.to_string()).unwrap_or_default()),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a table whose cells are all numeric; trailing empty cells shorten a column.
    pub fn read(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); header.len()];
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            for (j, cell) in rec.iter().enumerate() {
                let cell = cell.trim();
                if cell.is_empty() {
                    continue;
                }
                if columns[j].len() != line {
                    return Err(input(format!("gap inside column '{}'", header[j])));
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| input(format!("'{cell}' in column '{}' is not a number", header[j])))?;
                columns[j].push(v);
            }
        }
        Ok(Self { header, columns })
    }
}

impl Default for Table {
    fn default() -> Self {
        Self::new()
    }
}

/// `t, x1..xn` and, with measurements, `z1..zk`.
pub fn trajectory_table(traj: &Trajectory, measurements: Option<&MeasurementSet>) -> Table {
    let mut t = Table::new();
    t.push("t", traj.times.clone());
    t.push_rows("x", &traj.states);
    if let Some(z) = measurements {
        t.push_rows("z", &z.observations);
    }
    t
}

/// Measurements from a table with `t` and `z*` columns, or `x*` when there are none.
pub fn read_measurements(path: &Path) -> Result<MeasurementSet> {
    let table = Table::read(path)?;
    let times = table
        .column("t")
        .ok_or_else(|| input("table has no 't' column"))?
        .to_vec();
    let obs = table
        .rows_with_prefix("z")
        .or_else(|| table.rows_with_prefix("x"))
        .ok_or_else(|| input("table has no complete z1.. or x1.. columns"))?;
    MeasurementSet::from_observations(times, obs)
}

/// `t, x1..xn, dx1..dxn`
pub fn smoothed_table(times: &[f64], r: &SmoothResult) -> Table {
    let mut t = Table::new();
    t.push("t", times.to_vec());
    t.push_rows("x", &r.states_hat);
    t.push_rows("dx", &r.derivatives_hat);
    t
}

/// States and derivatives from a table with `x*` and `dx*` columns.
pub fn read_smoothed(path: &Path) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let table = Table::read(path)?;
    let x = table
        .rows_with_prefix("x")
        .ok_or_else(|| input("table has no complete x1.. columns"))?;
    let dx = table
        .rows_with_prefix("dx")
        .ok_or_else(|| input("table has no complete dx1.. columns"))?;
    if x.shape() != dx.shape() {
        return Err(input("state and derivative columns differ in shape"));
    }
    Ok((x, dx))
}

/// Provenance of a simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub system: String,
    pub params: Vec<(String, f64)>,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub relative_noise: f64,
    pub noise_rule: NoiseRule,
    pub noise_std: f64,
    pub dt: f64,
    pub duration: f64,
}

impl SimulationManifest {
    pub fn new(system: &OdeSystem, seed: u64, x0: &[f64], z: &MeasurementSet, rule: NoiseRule, duration: f64) -> Self {
        Self {
            system: system.name().to_string(),
            params: system.params().iter().map(|p| (p.name.to_string(), p.value)).collect(),
            seed,
            x0: x0.to_vec(),
            relative_noise: z.relative_noise,
            noise_rule: rule,
            noise_std: z.noise_std,
            dt: z.dt(),
            duration,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Comma-separated numbers, e.g. an initial condition on the command line.
pub fn parse_list<T>(text: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| config(format!("cannot parse '{}' in '{text}': {e}", s.trim())))
        })
        .collect()
}
