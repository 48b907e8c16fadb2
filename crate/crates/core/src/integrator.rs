//! Dormand-Prince 5(4) integration of autonomous ODEs onto a uniform grid.
//!
//! Steps are chosen adaptively; samples on the output grid come from the
//! method's fourth-order continuous extension, so the step sequence never has
//! to hit grid points.

/// Step-size control and failure thresholds.
#[derive(Debug, Clone, Copy)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Any state component with magnitude above this counts as blow-up.
    pub blowup: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            max_steps: 200_000,
            blowup: 1e6,
        }
    }
}

/// Why integration stopped before the end of the grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Diverged { time: f64 },
    Stalled { time: f64, reason: String },
}

impl Failure {
    pub fn time(&self) -> f64 {
        match self {
            Failure::Diverged { time } | Failure::Stalled { time, .. } => *time,
        }
    }
}

/// States sampled on `t_j = j dt`. On failure `states` holds only the samples
/// reached before the failing step.
#[derive(Debug, Clone)]
pub struct GridSolution {
    pub states: Vec<Vec<f64>>,
    pub failure: Option<Failure>,
    pub steps: usize,
}

// Fields are autonomous, so the stage nodes c_i are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Continuous extension.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

fn scaled_rms(v: &[f64], y: &[f64], opts: &IntegratorOptions) -> f64 {
    let n = v.len() as f64;
    (v.iter()
        .zip(y)
        .map(|(vi, yi)| {
            let sc = opts.atol + opts.rtol * yi.abs();
            (vi / sc).powi(2)
        })
        .sum::<f64>()
        / n)
        .sqrt()
}

fn initial_step<F>(field: &F, y0: &[f64], f0: &[f64], span: f64, opts: &IntegratorOptions) -> f64
where
    F: Fn(&[f64], &mut [f64]),
{
    let d0 = scaled_rms(y0, y0, opts);
    let d1 = scaled_rms(f0, y0, opts);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    field(&y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = scaled_rms(&diff, y0, opts) / h0;
    let dmax = d1.max(d2);
    let h1 = if !dmax.is_finite() {
        h0
    } else if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Integrate `dx/dt = field(x)` from `x0` and sample at `n_samples` points
/// spaced `dt` apart, starting at `t = 0`.
pub fn integrate_on_grid<F>(field: F, x0: &[f64], n_samples: usize, dt: f64, opts: &IntegratorOptions) -> GridSolution
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = x0.len();
    let mut states = Vec::with_capacity(n_samples);
    if n_samples == 0 {
        return GridSolution {
            states,
            failure: None,
            steps: 0,
        };
    }
    states.push(x0.to_vec());
    if x0.iter().any(|v| !v.is_finite() || v.abs() > opts.blowup) {
        return GridSolution {
            states,
            failure: Some(Failure::Diverged { time: 0.0 }),
            steps: 0,
        };
    }
    let t_end = (n_samples - 1) as f64 * dt;
    if n_samples == 1 {
        return GridSolution {
            states,
            failure: None,
            steps: 0,
        };
    }

    let mut y = x0.to_vec();
    let mut k1 = vec![0.0; n];
    field(&y, &mut k1);
    let mut h = initial_step(&field, &y, &k1, t_end, opts);

    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ys = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut scale = vec![0.0; n];

    let mut t = 0.0;
    let mut next_sample = 1usize;
    let mut steps = 0usize;

    while next_sample < n_samples {
        if steps >= opts.max_steps {
            return GridSolution {
                states,
                failure: Some(Failure::Stalled {
                    time: t,
                    reason: format!("step limit {} reached", opts.max_steps),
                }),
                steps,
            };
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return GridSolution {
                states,
                failure: Some(Failure::Stalled {
                    time: t,
                    reason: "step size underflow".to_string(),
                }),
                steps,
            };
        }

        for i in 0..n {
            ys[i] = y[i] + h * A21 * k1[i];
        }
        field(&ys, &mut k2);
        for i in 0..n {
            ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        field(&ys, &mut k3);
        for i in 0..n {
            ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        field(&ys, &mut k4);
        for i in 0..n {
            ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        field(&ys, &mut k5);
        for i in 0..n {
            ys[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        field(&ys, &mut k6);
        for i in 0..n {
            y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        field(&y_new, &mut k7);
        steps += 1;

        for i in 0..n {
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            scale[i] = y[i].abs().max(y_new[i].abs());
        }
        let err_norm = scaled_rms(&err, &scale, opts);

        if !err_norm.is_finite() {
            if y_new.iter().any(|v| !v.is_finite()) && h <= 1e-10 {
                return GridSolution {
                    states,
                    failure: Some(Failure::Diverged { time: t }),
                    steps,
                };
            }
            h *= FAC_MIN;
            continue;
        }

        if err_norm > 1.0 {
            h *= (SAFETY * err_norm.powf(-0.2)).max(FAC_MIN);
            continue;
        }

        // Accepted step: emit grid samples inside (t, t + h].
        let t_new = if last { t_end } else { t + h };
        if y_new.iter().any(|v| !v.is_finite() || v.abs() > opts.blowup) {
            return GridSolution {
                states,
                failure: Some(Failure::Diverged { time: t_new }),
                steps,
            };
        }
        while next_sample < n_samples {
            let ts = next_sample as f64 * dt;
            if ts > t_new && !(last && next_sample == n_samples - 1) {
                break;
            }
            let theta = ((ts - t) / h).clamp(0.0, 1.0);
            let theta1 = 1.0 - theta;
            let sample: Vec<f64> = (0..n)
                .map(|i| {
                    let r2 = y_new[i] - y[i];
                    let r3 = h * k1[i] - r2;
                    let r4 = r2 - h * k7[i] - r3;
                    let r5 = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                    y[i] + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)))
                })
                .collect();
            states.push(sample);
            next_sample += 1;
        }

        t = t_new;
        std::mem::swap(&mut y, &mut y_new);
        std::mem::swap(&mut k1, &mut k7);
        let fac = if err_norm == 0.0 {
            FAC_MAX
        } else {
            (SAFETY * err_norm.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
        };
        h *= fac;
    }

    GridSolution {
        states,
        failure: None,
        steps,
    }
}
