//! Choosing the Kalman ratio `rho` by cross-validation on withheld samples.
//!
//! A random subset of interior samples is dropped from the measurement term,
//! the smoother is run on the rest, and the prediction error at the dropped
//! samples scores each candidate. The search is one-dimensional in
//! `log10 rho`: a coarse grid, then golden-section refinement around the best
//! grid point.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::smoothing::{smooth_masked, KalmanConfig};
use crate::systems::MeasurementSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcvConfig {
    /// Fraction of interior samples withheld per fold.
    pub holdout_fraction: f64,
    /// Candidate `log10 rho` values, sorted.
    pub coarse_grid: Vec<f64>,
    /// Golden-section search stops once the `log10 rho` bracket is this narrow.
    pub refine_tolerance: f64,
    pub seed: u64,
    /// Independent random holdouts whose scores are averaged.
    pub folds: usize,
}

impl Default for GcvConfig {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.2,
            coarse_grid: (-8..=4).map(f64::from).collect(),
            refine_tolerance: 0.05,
            seed: 0,
            folds: 1,
        }
    }
}

impl GcvConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(config("holdout fraction must lie in (0, 1)"));
        }
        if self.coarse_grid.is_empty() {
            return Err(config("coarse grid is empty"));
        }
        if self.coarse_grid.iter().any(|v| !v.is_finite()) || self.coarse_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config("coarse grid must be finite and strictly increasing"));
        }
        if !(self.refine_tolerance > 0.0) {
            return Err(config("refine tolerance must be positive"));
        }
        if self.folds == 0 {
            return Err(config("need at least one fold"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcvResult {
    pub rho_star: f64,
    /// `false` when the best coarse value sits at an end of the grid.
    pub converged: bool,
    /// `(rho, held-out MSE)` for every evaluated candidate, by increasing `rho`.
    #[serde(rename = "curve")]
    pub score_curve: Vec<(f64, f64)>,
}

/// Interior sample indices withheld in each fold.
pub fn holdout_sets(m: usize, cfg: &GcvConfig) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    if m < 20 {
        return Err(config(format!("cross-validation needs at least 20 samples, got {m}")));
    }
    let interior = m - 2;
    let count = (cfg.holdout_fraction * interior as f64).round() as usize;
    if count < 2 {
        return Err(config(format!("holdout of {count} samples is too small")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.folds)
        .map(|_| {
            let mut idx: Vec<usize> = sample(&mut rng, interior, count).into_iter().map(|i| i + 1).collect();
            idx.sort_unstable();
            idx
        })
        .collect())
}

/// Select `rho` with identity observation map and measurement covariance.
pub fn gcv_select_rho(z: &MeasurementSet, cfg: &GcvConfig) -> Result<GcvResult> {
    gcv_select_rho_with(z, cfg, &KalmanConfig::new(1.0))
}

/// Select `rho` keeping the measurement model of `template`.
pub fn gcv_select_rho_with(z: &MeasurementSet, cfg: &GcvConfig, template: &KalmanConfig) -> Result<GcvResult> {
    let m = z.len();
    let folds = holdout_sets(m, cfg)?;
    let masks: Vec<Vec<bool>> = folds
        .iter()
        .map(|held| {
            let mut mask = vec![true; m];
            held.iter().for_each(|&i| mask[i] = false);
            mask
        })
        .collect();
    let energy = z.observations.norm_squared() / z.observations.len().max(1) as f64;
    let tie = 1e-12 * energy;

    let score = |log_rho: f64| -> Result<f64> {
        let mut kcfg = template.clone();
        kcfg.rho = 10f64.powf(log_rho);
        let mut total = 0.0;
        let mut count = 0usize;
        for (held, mask) in folds.iter().zip(&masks) {
            let r = smooth_masked(z, &kcfg, mask)?;
            let predicted = match &template.observation_map {
                Some(h) => h * &r.states_hat,
                None => r.states_hat,
            };
            for &i in held {
                for c in 0..predicted.nrows() {
                    total += (predicted[(c, i)] - z.observations[(c, i)]).powi(2);
                    count += 1;
                }
            }
        }
        Ok(total / count as f64)
    };

    let mut evaluated: Vec<(f64, f64)> = Vec::new();
    for &g in &cfg.coarse_grid {
        evaluated.push((g, score(g)?));
    }
    let coarse: Vec<f64> = evaluated.iter().map(|e| e.1).collect();
    let j = best_index(&coarse, tie);
    let last = cfg.coarse_grid.len() - 1;
    let converged = last > 0 && j > 0 && j < last;

    if last > 0 {
        // a boundary minimum still gets its one-sided bracket refined
        let lo = cfg.coarse_grid[j.saturating_sub(1)];
        let hi = cfg.coarse_grid[(j + 1).min(last)];
        golden_section(lo, hi, cfg.refine_tolerance, |x| {
            let s = score(x)?;
            evaluated.push((x, s));
            Ok(s)
        })?;
    }

    evaluated.sort_by(|a, b| a.0.total_cmp(&b.0));
    let scores: Vec<f64> = evaluated.iter().map(|e| e.1).collect();
    let best = best_index(&scores, tie);
    Ok(GcvResult {
        rho_star: 10f64.powf(evaluated[best].0),
        converged,
        score_curve: evaluated.into_iter().map(|(g, s)| (10f64.powf(g), s)).collect(),
    })
}

/// First index whose score is within `tie` of the minimum, so ties go to the
/// smallest `rho` when scores are listed by increasing `rho`.
fn best_index(scores: &[f64], tie: f64) -> usize {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    scores.iter().position(|&s| s <= min + tie).unwrap_or(0)
}

fn golden_section(mut a: f64, mut b: f64, tol: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<()> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(())
}
