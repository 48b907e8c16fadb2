use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{validated_dt, SmoothResult, SmoothingMethod};
use crate::error::{config, Result};
use crate::systems::MeasurementSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SavgolConfig {
    /// Window length in samples; even values are rounded up to the next odd one.
    pub window: usize,
    pub order: usize,
}

impl SavgolConfig {
    pub fn new(window: usize) -> Self {
        Self { window, order: 3 }
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    pub fn effective_window(&self) -> usize {
        self.window | 1
    }
}

/// Least-squares weights that map window samples to the fitted value and
/// slope (per sample step) at offset `pos` inside a window of length `w`.
fn filter(w: usize, order: usize, pos: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let v = DMatrix::from_fn(w, order + 1, |j, k| (j as f64 - pos as f64).powi(k as i32));
    let pinv = v
        .pseudo_inverse(1e-12)
        .map_err(|e| config(format!("Savitzky-Golay fit failed: {e}")))?;
    let value = pinv.row(0).iter().copied().collect();
    let slope = if order >= 1 {
        pinv.row(1).iter().copied().collect()
    } else {
        vec![0.0; w]
    };
    Ok((value, slope))
}

/// Local polynomial smoothing. Near the ends the window keeps its full length
/// and slides inward, and the fit is evaluated at the sample itself.
pub fn savitzky_golay(z: &MeasurementSet, cfg: &SavgolConfig) -> Result<SmoothResult> {
    let dt = validated_dt(z, 2)?;
    let (n, m) = z.observations.shape();
    let w = cfg.effective_window();
    if w > m {
        return Err(config(format!("window {w} exceeds {m} samples")));
    }
    if cfg.order >= w {
        return Err(config(format!(
            "polynomial order {} needs a window longer than {w}",
            cfg.order
        )));
    }
    let half = w / 2;
    // filters for each position of the evaluation point inside the window
    let filters: Vec<(Vec<f64>, Vec<f64>)> = (0..w).map(|pos| filter(w, cfg.order, pos)).collect::<Result<_>>()?;

    let mut states = DMatrix::zeros(n, m);
    let mut derivatives = DMatrix::zeros(n, m);
    for i in 0..m {
        let start = i.saturating_sub(half).min(m - w);
        let (value, slope) = &filters[i - start];
        for c in 0..n {
            let mut s = 0.0;
            let mut d = 0.0;
            for j in 0..w {
                let zj = z.observations[(c, start + j)];
                s += value[j] * zj;
                d += slope[j] * zj;
            }
            states[(c, i)] = s;
            derivatives[(c, i)] = d / dt;
        }
    }
    let mut hyperparameters = BTreeMap::new();
    hyperparameters.insert("window".to_string(), w as f64);
    hyperparameters.insert("order".to_string(), cfg.order as f64);
    Ok(SmoothResult {
        states_hat: states,
        derivatives_hat: derivatives,
        method: SmoothingMethod::SavitzkyGolay,
        hyperparameters,
        objective_value: None,
        converged: true,
    })
}
