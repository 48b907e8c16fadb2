//! Total-variation regularized differentiation.
//!
//! For each coordinate, with `y = z - z_0` and `A` the trapezoidal cumulative
//! integral from the first sample, the derivative estimate is
//!
//! ```text
//! u* = argmin_u  |A u - y|^2 + lam * sum_i |u_{i+1} - u_i|
//! ```
//!
//! and the state estimate is `z_0 + A u*`.
//!
//! The problem is solved by a log-barrier interior-point method on
//! `|u_{i+1} - u_i| <= t_i`. Every Newton step is a banded weighted least
//! squares problem in the interleaved unknowns `(x_i, u_i)`; the integration
//! `x = A u` enters as heavily weighted rows, so no dense `m × m` matrix is
//! ever formed. The barrier stops on its duality-gap bound. A final polish
//! fixes the plateau structure of the iterate, solves the resulting small
//! quadratic exactly and keeps it if the objective drops.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{validated_dt, SmoothResult, SmoothingMethod};
use crate::banded::BandedLeastSquares;
use crate::error::{config, Error, Result};
use crate::systems::MeasurementSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvConfig {
    pub lam: f64,
    /// Duality-gap tolerance, relative to `max(1, objective)` on data scaled to unit RMS.
    pub tol: f64,
    /// Cap on Newton iterations.
    pub max_iter: usize,
}

impl TvConfig {
    pub fn new(lam: f64) -> Self {
        Self {
            lam,
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

/// Objective summed over coordinates for candidate derivatives `u` (`n × m`).
pub fn tv_objective(z: &MeasurementSet, lam: f64, derivatives: &DMatrix<f64>) -> Result<f64> {
    let dt = validated_dt(z, 2)?;
    if derivatives.shape() != z.observations.shape() {
        return Err(config("derivative estimate does not match the measurements"));
    }
    let mut total = 0.0;
    for c in 0..z.observations.nrows() {
        let obs: Vec<f64> = z.observations.row(c).iter().copied().collect();
        let y: Vec<f64> = obs.iter().map(|v| v - obs[0]).collect();
        let u: Vec<f64> = derivatives.row(c).iter().copied().collect();
        total += objective(&u, &y, dt, lam);
    }
    Ok(total)
}

pub fn tv_smooth(z: &MeasurementSet, cfg: &TvConfig) -> Result<SmoothResult> {
    let dt = validated_dt(z, 3)?;
    if !(cfg.lam >= 0.0) || !cfg.lam.is_finite() {
        return Err(config(format!("lam must be non-negative and finite, got {}", cfg.lam)));
    }
    if !(cfg.tol > 0.0) {
        return Err(config("tolerance must be positive"));
    }
    let (n, m) = z.observations.shape();
    let mut states = DMatrix::zeros(n, m);
    let mut derivatives = DMatrix::zeros(n, m);
    let mut converged = true;
    let mut iterations = 0usize;
    let mut total = 0.0;
    for c in 0..n {
        let obs: Vec<f64> = z.observations.row(c).iter().copied().collect();
        let y: Vec<f64> = obs.iter().map(|v| v - obs[0]).collect();
        let sol = solve_coordinate(&y, dt, cfg)?;
        converged &= sol.converged;
        iterations += sol.iterations;
        let x = cumulative_trapezoid(&sol.u, dt);
        for i in 0..m {
            states[(c, i)] = obs[0] + x[i];
            derivatives[(c, i)] = sol.u[i];
        }
        total += objective(&sol.u, &y, dt, cfg.lam);
    }
    let mut hyperparameters = BTreeMap::new();
    hyperparameters.insert("lam".to_string(), cfg.lam);
    hyperparameters.insert("newton_iterations".to_string(), iterations as f64);
    Ok(SmoothResult {
        states_hat: states,
        derivatives_hat: derivatives,
        method: SmoothingMethod::TotalVariation,
        hyperparameters,
        objective_value: Some(total),
        converged,
    })
}

pub(crate) fn cumulative_trapezoid(u: &[f64], dt: f64) -> Vec<f64> {
    let mut x = Vec::with_capacity(u.len());
    let mut acc = 0.0;
    x.push(0.0);
    for w in u.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        x.push(acc);
    }
    x
}

fn total_variation(u: &[f64]) -> f64 {
    u.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

fn objective(u: &[f64], y: &[f64], dt: f64, lam: f64) -> f64 {
    let x = cumulative_trapezoid(u, dt);
    let fit: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    fit + lam * total_variation(u)
}

struct CoordinateSolution {
    u: Vec<f64>,
    converged: bool,
    iterations: usize,
}

fn solve_coordinate(y: &[f64], dt: f64, cfg: &TvConfig) -> Result<CoordinateSolution> {
    let m = y.len();
    let scale = (y.iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt();
    if scale == 0.0 {
        return Ok(CoordinateSolution {
            u: vec![0.0; m],
            converged: true,
            iterations: 0,
        });
    }
    let ys: Vec<f64> = y.iter().map(|v| v / scale).collect();
    let lam = cfg.lam / scale;

    let mut sol = if lam == 0.0 {
        CoordinateSolution {
            u: least_squares(&ys, dt)?,
            converged: true,
            iterations: 1,
        }
    } else {
        barrier(&ys, dt, lam, cfg)?
    };
    if lam > 0.0 {
        if let Some(p) = polish(&sol.u, &ys, dt, lam) {
            if objective(&p, &ys, dt, lam) <= objective(&sol.u, &ys, dt, lam) {
                sol.u = p;
            }
        }
    }
    sol.u.iter_mut().for_each(|v| *v *= scale);
    Ok(sol)
}

/// Weight for the rows that impose `x = A u`, relative to the largest other row.
const CONSTRAINT_WEIGHT: f64 = 1e8;

/// Minimize `fit_w^2 |x - y|^2 + sum_i (tv_w_i (u_{i+1} - u_i) - tv_rhs_i)^2`
/// subject to `x = A u`, returning `u`.
fn banded_solve(y: &[f64], dt: f64, fit_w: f64, tv_w: &[f64], tv_rhs: &[f64]) -> Result<Vec<f64>> {
    let m = y.len();
    let max_w = tv_w.iter().fold(fit_w, |a, &b| a.max(b)).max(1.0);
    let g = CONSTRAINT_WEIGHT * max_w;
    let h = 0.5 * dt;
    let mut ls = BandedLeastSquares::new(2 * m, 3);
    ls.add_row(0, &[g], 0.0);
    for i in 0..m {
        ls.add_row(2 * i, &[fit_w], fit_w * y[i]);
        if i + 1 < m {
            // x_{i+1} - x_i - dt/2 (u_i + u_{i+1}) = 0
            ls.add_row(2 * i, &[-g, -g * h, g, -g * h], 0.0);
            ls.add_row(2 * i + 1, &[-tv_w[i], 0.0, tv_w[i]], tv_rhs[i]);
        }
    }
    // Pivots span the constraint weight down to the fit weight, so only an
    // exactly vanishing pivot signals a singular step.
    let s = ls.solve(0.0).map_err(|e| Error::Numerical {
        rho: f64::NAN,
        reason: format!("total-variation step is singular at unknown {}", e.column),
    })?;
    Ok((0..m).map(|i| s[2 * i + 1]).collect())
}

/// `lam = 0`: least squares is not unique (an alternating `u` integrates to
/// zero), so a vanishing penalty on `|D u|^2` selects the smoothest minimizer.
fn least_squares(y: &[f64], dt: f64) -> Result<Vec<f64>> {
    let m = y.len();
    let eps = 1e-7;
    banded_solve(y, dt, 1.0, &vec![eps; m - 1], &vec![0.0; m - 1])
}

fn barrier(y: &[f64], dt: f64, lam: f64, cfg: &TvConfig) -> Result<CoordinateSolution> {
    let m = y.len();
    let k = m - 1;
    // start from the best constant derivative
    let tau_sq: f64 = (0..m).map(|i| (i as f64 * dt).powi(2)).sum();
    let slope = (0..m).map(|i| i as f64 * dt * y[i]).sum::<f64>() / tau_sq;
    let mut u = vec![slope; m];
    let mut t = vec![1.0; k];
    let f0 = objective(&u, y, dt, lam);
    let mut tau = (k as f64 / f0.max(1e-12)).clamp(1e-6, 1e6);
    let mu = 20.0;

    let mut iterations = 0;
    let mut converged = false;
    let barrier_value = |u: &[f64], t: &[f64], tau: f64| -> f64 {
        let x = cumulative_trapezoid(u, dt);
        let fit: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        let mut v = tau * (fit + lam * t.iter().sum::<f64>());
        for i in 0..k {
            let d = u[i + 1] - u[i];
            let (lo, hi) = (t[i] - d, t[i] + d);
            if !(lo > 0.0 && hi > 0.0) {
                return f64::INFINITY;
            }
            v -= lo.ln() + hi.ln();
        }
        v
    };

    let mut tv_w = vec![0.0; k];
    let mut tv_rhs = vec![0.0; k];
    let mut g_t = vec![0.0; k];
    let mut coupling = vec![0.0; k];
    let mut curvature = vec![0.0; k];
    let mut h_d = vec![0.0; k];
    'outer: loop {
        for _ in 0..100 {
            if iterations >= cfg.max_iter {
                break 'outer;
            }
            iterations += 1;
            for i in 0..k {
                let d = u[i + 1] - u[i];
                let (p, q) = (1.0 / (t[i] - d), 1.0 / (t[i] + d));
                let (a, b) = (p * p, q * q);
                h_d[i] = p - q;
                g_t[i] = tau * lam - p - q;
                curvature[i] = a + b;
                coupling[i] = b - a;
                let sigma = 4.0 * a * b / (a + b);
                let gd = h_d[i] - coupling[i] / curvature[i] * g_t[i];
                let c = gd / sigma.sqrt();
                tv_w[i] = (0.5 * sigma).sqrt();
                tv_rhs[i] = tv_w[i] * d - c / 2f64.sqrt();
            }
            let u_new = banded_solve(y, dt, tau.sqrt(), &tv_w, &tv_rhs)?;
            let du: Vec<f64> = u_new.iter().zip(&u).map(|(a, b)| a - b).collect();
            let dd: Vec<f64> = du.windows(2).map(|w| w[1] - w[0]).collect();
            let dt_step: Vec<f64> = (0..k).map(|i| -(g_t[i] + coupling[i] * dd[i]) / curvature[i]).collect();

            // directional derivative of the barrier function along the step
            let x = cumulative_trapezoid(&u, dt);
            let ax = cumulative_trapezoid(&du, dt);
            let mut slope_along = 0.0;
            for i in 0..m {
                slope_along += 2.0 * tau * (x[i] - y[i]) * ax[i];
            }
            for i in 0..k {
                slope_along += h_d[i] * dd[i] + g_t[i] * dt_step[i];
            }
            if -slope_along / 2.0 <= 1e-10 {
                break;
            }

            let mut s: f64 = 1.0;
            for i in 0..k {
                let d = u[i + 1] - u[i];
                let lo_rate = dt_step[i] - dd[i];
                let hi_rate = dt_step[i] + dd[i];
                if lo_rate < 0.0 {
                    s = s.min(0.99 * (t[i] - d) / -lo_rate);
                }
                if hi_rate < 0.0 {
                    s = s.min(0.99 * (t[i] + d) / -hi_rate);
                }
            }
            let phi = barrier_value(&u, &t, tau);
            let mut accepted = false;
            while s > 1e-12 {
                let un: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + s * b).collect();
                let tn: Vec<f64> = t.iter().zip(&dt_step).map(|(a, b)| a + s * b).collect();
                if barrier_value(&un, &tn, tau) <= phi + 0.01 * s * slope_along {
                    u = un;
                    t = tn;
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let gap = 2.0 * k as f64 / tau;
        if gap <= cfg.tol * objective(&u, y, dt, lam).max(1.0) {
            converged = true;
            break;
        }
        tau *= mu;
    }
    Ok(CoordinateSolution {
        u,
        converged,
        iterations,
    })
}

/// Largest number of plateaus the polish will handle.
const MAX_SEGMENTS: usize = 64;

/// Exact minimizer over derivatives with the plateau structure and jump signs of `u`.
fn polish(u: &[f64], y: &[f64], dt: f64, lam: f64) -> Option<Vec<f64>> {
    let m = u.len();
    let spread = u.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for rel in [1e-6, 1e-4, 1e-2] {
        // segment boundaries where the derivative jumps
        let mut starts = vec![0usize];
        for i in 0..m - 1 {
            if (u[i + 1] - u[i]).abs() > rel * spread {
                starts.push(i + 1);
            }
        }
        let segments = starts.len();
        if segments > MAX_SEGMENTS {
            continue;
        }
        let mut ends: Vec<usize> = starts[1..].to_vec();
        ends.push(m);
        let mean = |s: usize, e: usize| u[s..e].iter().sum::<f64>() / (e - s) as f64;
        let signs: Vec<f64> = (0..segments - 1)
            .map(|k| (mean(starts[k + 1], ends[k + 1]) - mean(starts[k], ends[k])).signum())
            .collect();
        // columns: integral of each plateau indicator
        let mut design = DMatrix::zeros(m, segments);
        for k in 0..segments {
            let indicator: Vec<f64> = (0..m)
                .map(|i| if i >= starts[k] && i < ends[k] { 1.0 } else { 0.0 })
                .collect();
            for (i, v) in cumulative_trapezoid(&indicator, dt).into_iter().enumerate() {
                design[(i, k)] = v;
            }
        }
        // gradient of lam * sum_k s_k (c_{k+1} - c_k)
        let mut e = DVector::zeros(segments);
        for (k, s) in signs.iter().enumerate() {
            e[k] -= s;
            e[k + 1] += s;
        }
        let qr = design.clone().qr();
        let r = qr.r();
        if (0..segments).any(|j| r[(j, j)].abs() < 1e-12 * r.amax()) {
            continue;
        }
        let qty = qr.q().transpose() * DVector::from_column_slice(y);
        let w = r.transpose().solve_lower_triangular(&e).expect("nonsingular");
        let c = r.solve_upper_triangular(&(qty - 0.5 * lam * w)).expect("nonsingular");
        let mut candidate = vec![0.0; m];
        for k in 0..segments {
            candidate[starts[k]..ends[k]].iter_mut().for_each(|v| *v = c[k]);
        }
        let f = objective(&candidate, y, dt, lam);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, candidate));
        }
    }
    best.map(|(_, u)| u)
}
