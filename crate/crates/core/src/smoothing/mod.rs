//! State and derivative estimation from noisy measurements.

mod finite_diff;
mod kalman;
mod savgol;
mod tv;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use finite_diff::finite_difference;
pub(crate) use kalman::smooth_masked;
pub use kalman::{kalman_objective, kalman_smooth, smooth_with_mask, KalmanConfig, KalmanObjective, ProcessModel};
pub use savgol::{savitzky_golay, SavgolConfig};
pub use tv::{tv_objective, tv_smooth, TvConfig};

use crate::error::{config, input, Result};
use crate::systems::{check_uniform_grid, MeasurementSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingMethod {
    Kalman,
    TotalVariation,
    SavitzkyGolay,
    FiniteDifference,
}

impl SmoothingMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Kalman => "kalman",
            Self::TotalVariation => "total_variation",
            Self::SavitzkyGolay => "savitzky_golay",
            Self::FiniteDifference => "finite_difference",
        }
    }
}

impl fmt::Display for SmoothingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SmoothingMethod {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kalman" => Ok(Self::Kalman),
            "total_variation" | "tv" => Ok(Self::TotalVariation),
            "savitzky_golay" | "savgol" => Ok(Self::SavitzkyGolay),
            "finite_difference" | "finite_diff" | "fd" => Ok(Self::FiniteDifference),
            _ => Err(config(format!("unknown smoothing method `{s}`"))),
        }
    }
}

/// Smoothed states and derivatives on the measurement grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothResult {
    /// `n × m`
    pub states_hat: DMatrix<f64>,
    /// `n × m`
    pub derivatives_hat: DMatrix<f64>,
    pub method: SmoothingMethod,
    pub hyperparameters: BTreeMap<String, f64>,
    /// Attained objective (Kalman and total variation only).
    pub objective_value: Option<f64>,
    /// `false` when an iterative solver stopped at its iteration cap.
    pub converged: bool,
}

/// Sidecar metadata written next to a smoothed-trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothSidecar {
    pub method: SmoothingMethod,
    pub hyperparameters: BTreeMap<String, f64>,
    pub objective_value: Option<f64>,
    pub converged: bool,
}

impl SmoothResult {
    pub fn sidecar(&self) -> SmoothSidecar {
        SmoothSidecar {
            method: self.method,
            hyperparameters: self.hyperparameters.clone(),
            objective_value: self.objective_value,
            converged: self.converged,
        }
    }
}

/// Grid spacing of a measurement set after the checks every smoother shares.
pub(crate) fn validated_dt(z: &MeasurementSet, min_len: usize) -> Result<f64> {
    let m = z.len();
    if m < min_len {
        return Err(config(format!("need at least {min_len} samples, got {m}")));
    }
    if z.observations.ncols() != m {
        return Err(config("observation matrix does not match the time grid"));
    }
    if z.observations.iter().any(|v| !v.is_finite()) {
        return Err(input("observations contain non-finite values"));
    }
    check_uniform_grid(&z.times)
}
