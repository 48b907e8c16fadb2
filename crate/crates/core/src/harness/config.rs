use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{config, Error, Result};
use crate::hyperopt::GcvConfig;
use crate::sindy::EnsembleOptions;
use crate::systems::{grid_len, NoiseRule, SystemKind};

/// Derivative estimation strategy of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KalmanGcv,
    KalmanGrid,
    TvGrid,
    SavgolGrid,
    FiniteDiff,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::KalmanGcv,
        Method::KalmanGrid,
        Method::TvGrid,
        Method::SavgolGrid,
        Method::FiniteDiff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::KalmanGcv => "kalman_gcv",
            Method::KalmanGrid => "kalman_grid",
            Method::TvGrid => "tv_grid",
            Method::SavgolGrid => "savgol_grid",
            Method::FiniteDiff => "finite_diff",
        }
    }

    /// Hyperparameters picked by comparing against the true coefficients.
    pub fn is_oracle(self) -> bool {
        matches!(self, Method::KalmanGrid | Method::TvGrid | Method::SavgolGrid)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodGrids {
    pub kalman: Vec<f64>,
    pub tv: Vec<f64>,
    pub savgol: Vec<usize>,
    pub savgol_order: usize,
}

impl Default for MethodGrids {
    fn default() -> Self {
        let decades = vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0];
        Self {
            kalman: decades.clone(),
            tv: decades,
            savgol: vec![5, 8, 12, 15],
            savgol_order: 3,
        }
    }
}

/// How the trajectories of one trial enter the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// One regression over the concatenated samples of every trajectory.
    #[default]
    Pooled,
    /// One ensemble per trajectory, combined by elementwise median.
    PerTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityMode {
    /// The true number of terms in each equation.
    #[default]
    PerRow,
    /// The true total, allocated across equations by the optimizer.
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub systems: Vec<SystemKind>,
    pub noise_grid: Vec<f64>,
    /// Seconds.
    pub duration_grid: Vec<f64>,
    /// Noise held fixed along the duration sweep.
    pub default_noise: f64,
    /// Duration held fixed along the noise sweep.
    pub default_duration: f64,
    /// Run every (noise, duration) pair instead of the two sweeps.
    pub full_cross: bool,
    pub dt: f64,
    pub n_trajectories: usize,
    /// Held-out initial conditions for forward simulation.
    pub n_test_trajectories: usize,
    /// Horizon of the forward simulations, seconds.
    pub simulation_duration: f64,
    pub master_seed: u64,
    /// Independent repetitions of every cell.
    pub seeds_per_cell: usize,
    pub methods: Vec<Method>,
    pub method_grids: MethodGrids,
    pub noise_rule: NoiseRule,
    pub pooling: Pooling,
    pub sparsity: SparsityMode,
    pub ensemble: EnsembleOptions,
    /// Search settings for `kalman_gcv`; the seed is replaced per trajectory.
    pub gcv: GcvConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            systems: SystemKind::ALL.to_vec(),
            noise_grid: vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
            duration_grid: vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0],
            default_noise: 0.1,
            default_duration: 16.0,
            full_cross: false,
            dt: 0.01,
            n_trajectories: 10,
            n_test_trajectories: 2,
            simulation_duration: 8.0,
            master_seed: 19,
            seeds_per_cell: 1,
            methods: Method::ALL.to_vec(),
            method_grids: MethodGrids::default(),
            noise_rule: NoiseRule::VarianceRatio,
            pooling: Pooling::Pooled,
            sparsity: SparsityMode::PerRow,
            ensemble: EnsembleOptions::default(),
            gcv: GcvConfig::default(),
        }
    }
}

fn all_positive(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(config(format!("{name} values must be positive and finite")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        all_positive("noise grid", &self.noise_grid)?;
        all_positive("duration grid", &self.duration_grid)?;
        all_positive("default noise", &[self.default_noise])?;
        all_positive("kalman grid", &self.method_grids.kalman)?;
        all_positive("tv grid", &self.method_grids.tv)?;
        all_positive("dt", &[self.dt])?;
        all_positive("simulation duration", &[self.simulation_duration])?;
        if self.method_grids.savgol.contains(&0) {
            return Err(config("savgol windows must be positive"));
        }
        for &d in self
            .duration_grid
            .iter()
            .chain([&self.default_duration, &self.simulation_duration])
        {
            grid_len(d, self.dt)?;
        }
        if self.n_trajectories == 0 || self.seeds_per_cell == 0 {
            return Err(config("need at least one trajectory and one seed per cell"));
        }
        let grids = &self.method_grids;
        for (m, empty) in [
            (Method::KalmanGrid, grids.kalman.is_empty()),
            (Method::TvGrid, grids.tv.is_empty()),
            (Method::SavgolGrid, grids.savgol.is_empty()),
        ] {
            if empty && self.methods.contains(&m) {
                return Err(config(format!("{m} needs a nonempty grid")));
            }
        }
        Ok(())
    }

    /// `(noise, duration)` cells: the noise sweep at the default duration,
    /// then the duration sweep at the default noise, without repeating the
    /// shared cell.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let mut cells: Vec<(f64, f64)> = Vec::new();
        let mut push = |c: (f64, f64)| {
            if !cells.contains(&c) {
                cells.push(c);
            }
        };
        if self.full_cross {
            for &d in &self.duration_grid {
                for &n in &self.noise_grid {
                    push((n, d));
                }
            }
        } else {
            for &n in &self.noise_grid {
                push((n, self.default_duration));
            }
            for &d in &self.duration_grid {
                push((self.default_noise, d));
            }
        }
        cells
    }

    /// Every trial of the run, in planning order.
    pub fn plan(&self) -> Vec<TrialSpec> {
        let mut out = Vec::new();
        for &system in &self.systems {
            for (noise, duration) in self.cells() {
                for trial_index in 0..self.seeds_per_cell {
                    for &method in &self.methods {
                        out.push(TrialSpec {
                            system,
                            method,
                            noise,
                            duration,
                            trial_index,
                        });
                    }
                }
            }
        }
        out
    }

    /// Digest of the whole configuration.
    pub fn digest(&self) -> String {
        digest_hex(&canonical_json(&json!(self)))
    }

    /// Settings that can change the outcome of a trial with `method`.
    fn trial_settings(&self, method: Method) -> Value {
        let grid = match method {
            Method::KalmanGcv => json!(self.gcv),
            Method::KalmanGrid => json!(self.method_grids.kalman),
            Method::TvGrid => json!(self.method_grids.tv),
            Method::SavgolGrid => json!({
                "windows": self.method_grids.savgol,
                "order": self.method_grids.savgol_order,
            }),
            Method::FiniteDiff => Value::Null,
        };
        json!({
            "dt": self.dt,
            "n_trajectories": self.n_trajectories,
            "n_test_trajectories": self.n_test_trajectories,
            "simulation_duration": self.simulation_duration,
            "master_seed": self.master_seed,
            "noise_rule": self.noise_rule,
            "pooling": self.pooling,
            "sparsity": self.sparsity,
            "ensemble": self.ensemble,
            "method_settings": grid,
        })
    }

    /// Stable identifier of one trial.
    pub fn trial_key(&self, spec: &TrialSpec) -> String {
        let v = json!({ "settings": self.trial_settings(spec.method), "trial": spec });
        digest_hex(&canonical_json(&v))
    }

    /// Seed of a trial's random draws. It does not depend on the method, so
    /// every method of a cell sees the same data.
    pub fn trial_seed(&self, spec: &TrialSpec) -> u64 {
        let v = json!({
            "master_seed": self.master_seed,
            "system": spec.system,
            "noise": spec.noise,
            "duration": spec.duration,
            "trial_index": spec.trial_index,
        });
        let d = Sha256::digest(canonical_json(&v).as_bytes());
        u64::from_be_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// One (system, method, cell, repetition) of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub system: SystemKind,
    pub method: Method,
    pub noise: f64,
    pub duration: f64,
    pub trial_index: usize,
}

/// JSON with object keys sorted at every level and no whitespace.
pub fn canonical_json(v: &Value) -> String {
    fn sorted(v: &Value) -> Value {
        match v {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                let mut out = serde_json::Map::new();
                for k in keys {
                    out.insert(k.clone(), sorted(&map[k]));
                }
                Value::Object(out)
            }
            Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    sorted(v).to_string()
}

fn digest_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
