//! Scores for discovered models against the true system.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::sindy::{simulate_model, CoefficientMatrix};
use crate::systems::{integrate, OdeSystem};

/// Default magnitude below which a coefficient counts as zero.
pub const SUPPORT_TOL: f64 = 1e-10;

fn check_same_library(est: &CoefficientMatrix, truth: &CoefficientMatrix) -> Result<()> {
    if est.library() != truth.library() {
        return Err(config("estimated and true coefficients use different libraries"));
    }
    Ok(())
}

/// F1 of the nonzero pattern over all `n × p` positions; 1 when both are empty.
pub fn coefficient_f1(est: &CoefficientMatrix, truth: &CoefficientMatrix, tol: f64) -> Result<f64> {
    check_same_library(est, truth)?;
    if !(tol >= 0.0) {
        return Err(config("support tolerance must be non-negative"));
    }
    let (mut tp, mut fp, mut fun) = (0usize, 0usize, 0usize);
    for (e, t) in est.values().iter().zip(truth.values().iter()) {
        match (e.abs() > tol, t.abs() > tol) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fun += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fun == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fun) as f64)
}

/// Mean of `|est - truth|` over all `n × p` entries.
pub fn coefficient_mae(est: &CoefficientMatrix, truth: &CoefficientMatrix) -> Result<f64> {
    check_same_library(est, truth)?;
    let diff = est.values() - truth.values();
    Ok(diff.iter().map(|v| v.abs()).sum::<f64>() / diff.len() as f64)
}

/// Mean of `|est - truth|` over the entries where the truth is nonzero.
pub fn support_mae(est: &CoefficientMatrix, truth: &CoefficientMatrix, tol: f64) -> Result<f64> {
    check_same_library(est, truth)?;
    let (sum, count) = est
        .values()
        .iter()
        .zip(truth.values().iter())
        .filter(|(_, t)| t.abs() > tol)
        .fold((0.0, 0usize), |(s, c), (e, t)| (s + (e - t).abs(), c + 1));
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Forward simulation of a discovered model from one test initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimScore {
    /// RMS over time and coordinates, up to blow-up when `diverged`.
    pub sim_rmse: f64,
    pub diverged: bool,
    /// Chaotic systems only: the simulation stayed within the true bounding
    /// box scaled by three about its centre.
    pub bounded: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub f1: f64,
    pub mae: f64,
    pub support_mae: f64,
    pub simulations: Vec<SimScore>,
}

/// Coefficient scores plus a simulation from each test initial condition.
pub fn score_trial(
    xi: &CoefficientMatrix,
    system: &OdeSystem,
    test_ics: &[Vec<f64>],
    duration: f64,
    dt: f64,
) -> Result<TrialScore> {
    let truth = system.true_coefficients();
    Ok(TrialScore {
        f1: coefficient_f1(xi, &truth, SUPPORT_TOL)?,
        mae: coefficient_mae(xi, &truth)?,
        support_mae: support_mae(xi, &truth, SUPPORT_TOL)?,
        simulations: simulation_score(xi, system, test_ics, duration, dt)?,
    })
}

pub fn simulation_score(
    xi: &CoefficientMatrix,
    system: &OdeSystem,
    test_ics: &[Vec<f64>],
    duration: f64,
    dt: f64,
) -> Result<Vec<SimScore>> {
    if xi.library().dim() != system.dim() {
        return Err(config("model and system dimensions differ"));
    }
    test_ics
        .iter()
        .map(|x0| {
            let truth = integrate(system, x0, duration, dt)?;
            let sim = simulate_model(xi, x0, duration, dt)?;
            let reached = sim.trajectory.len();
            let n = system.dim();
            let mut sq = 0.0;
            for i in 0..reached {
                for c in 0..n {
                    sq += (sim.trajectory.states[(c, i)] - truth.states[(c, i)]).powi(2);
                }
            }
            let sim_rmse = (sq / (reached * n).max(1) as f64).sqrt();
            let bounded = system.kind().is_chaotic().then(|| {
                !sim.diverged
                    && (0..n).all(|c| {
                        let row = truth.states.row(c);
                        let (lo, hi) = (row.min(), row.max());
                        let (mid, half) = (0.5 * (lo + hi), 1.5 * (hi - lo));
                        sim.trajectory.states.row(c).iter().all(|v| (v - mid).abs() <= half)
                    })
            });
            Ok(SimScore {
                sim_rmse,
                diverged: sim.diverged,
                bounded,
            })
        })
        .collect()
}
