//! Benchmark ODE systems, simulation, and noisy measurement generation.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::integrator::{integrate_on_grid, Failure, IntegratorOptions};
use crate::sindy::{CoefficientMatrix, FeatureLibrary};

/// The eight benchmark systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    LinearDamped,
    CubicDamped,
    Duffing,
    Hopf,
    LotkaVolterra,
    Rossler,
    VanDerPol,
    Lorenz,
}

impl SystemKind {
    pub const ALL: [SystemKind; 8] = [
        SystemKind::LinearDamped,
        SystemKind::CubicDamped,
        SystemKind::Duffing,
        SystemKind::Hopf,
        SystemKind::LotkaVolterra,
        SystemKind::Rossler,
        SystemKind::VanDerPol,
        SystemKind::Lorenz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::LinearDamped => "linear_damped",
            SystemKind::CubicDamped => "cubic_damped",
            SystemKind::Duffing => "duffing",
            SystemKind::Hopf => "hopf",
            SystemKind::LotkaVolterra => "lotka_volterra",
            SystemKind::Rossler => "rossler",
            SystemKind::VanDerPol => "van_der_pol",
            SystemKind::Lorenz => "lorenz",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            SystemKind::Rossler | SystemKind::Lorenz => 3,
            _ => 2,
        }
    }

    /// Systems whose trajectories are chaotic at the default parameters.
    pub fn is_chaotic(self) -> bool {
        matches!(self, SystemKind::Rossler | SystemKind::Lorenz)
    }

    fn default_params(self) -> Vec<Param> {
        let p = |name: &'static str, value: f64| Param { name, value };
        match self {
            SystemKind::LinearDamped | SystemKind::CubicDamped => {
                vec![p("alpha", 0.1), p("beta", 2.0)]
            }
            SystemKind::Duffing => vec![p("alpha", 0.2), p("beta", 0.05), p("gamma", 1.0)],
            SystemKind::Hopf => vec![p("alpha", 0.05), p("beta", 1.0), p("gamma", 1.0)],
            SystemKind::LotkaVolterra => vec![p("alpha", 5.0), p("beta", 1.0)],
            SystemKind::Rossler => vec![p("alpha", 0.2), p("beta", 0.2), p("gamma", 5.7)],
            SystemKind::VanDerPol => vec![p("alpha", 0.5)],
            SystemKind::Lorenz => vec![p("sigma", 10.0), p("rho", 28.0), p("beta", 8.0 / 3.0)],
        }
    }

    fn default_ic_mean(self) -> Vec<f64> {
        match self {
            SystemKind::LotkaVolterra => vec![5.0, 5.0],
            SystemKind::Rossler => vec![0.0, 0.0, 0.0],
            SystemKind::Lorenz => vec![0.0, 0.0, 15.0],
            _ => vec![0.0, 0.0],
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| config(format!("unknown system '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Param {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcDistribution {
    Normal,
    /// Independent gamma draws matching the mean and variance of each coordinate.
    Gamma,
}

/// A benchmark system with its parameters and initial-condition distribution.
#[derive(Debug, Clone)]
pub struct OdeSystem {
    kind: SystemKind,
    params: Vec<Param>,
    ic_mean: Vec<f64>,
    ic_variance: f64,
    ic_distribution: IcDistribution,
}

impl OdeSystem {
    pub fn new(kind: SystemKind) -> Self {
        let ic_distribution = if kind == SystemKind::LotkaVolterra {
            IcDistribution::Gamma
        } else {
            IcDistribution::Normal
        };
        Self {
            kind,
            params: kind.default_params(),
            ic_mean: kind.default_ic_mean(),
            ic_variance: 9.0,
            ic_distribution,
        }
    }

    /// Override the parameter values (in the order of [`OdeSystem::params`]).
    pub fn with_params(mut self, values: &[f64]) -> Result<Self> {
        if values.len() != self.params.len() {
            return Err(config(format!(
                "{} takes {} parameters, got {}",
                self.kind,
                self.params.len(),
                values.len()
            )));
        }
        for (p, &v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(self)
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn ic_mean(&self) -> &[f64] {
        &self.ic_mean
    }

    pub fn ic_variance(&self) -> f64 {
        self.ic_variance
    }

    pub fn ic_distribution(&self) -> IcDistribution {
        self.ic_distribution
    }

    fn p(&self, i: usize) -> f64 {
        self.params[i].value
    }

    /// Vector field `f(x)`, written directly from the textbook form of each system.
    pub fn rhs_into(&self, x: &[f64], dx: &mut [f64]) {
        match self.kind {
            SystemKind::LinearDamped => {
                let (a, b) = (self.p(0), self.p(1));
                dx[0] = -a * x[0] + b * x[1];
                dx[1] = -b * x[0] - a * x[1];
            }
            SystemKind::CubicDamped => {
                let (a, b) = (self.p(0), self.p(1));
                let (c0, c1) = (x[0].powi(3), x[1].powi(3));
                dx[0] = -a * c0 + b * c1;
                dx[1] = -b * c0 - a * c1;
            }
            SystemKind::Duffing => {
                let (a, b, g) = (self.p(0), self.p(1), self.p(2));
                dx[0] = x[1];
                dx[1] = -a * x[1] - b * x[0] - g * x[0].powi(3);
            }
            SystemKind::Hopf => {
                let (a, b, g) = (self.p(0), self.p(1), self.p(2));
                let r2 = x[0] * x[0] + x[1] * x[1];
                dx[0] = -a * x[0] - b * x[1] - g * x[0] * r2;
                dx[1] = b * x[0] - a * x[1] - g * x[1] * r2;
            }
            SystemKind::LotkaVolterra => {
                let (a, b) = (self.p(0), self.p(1));
                dx[0] = a * x[0] - b * x[0] * x[1];
                dx[1] = b * x[0] * x[1] - 2.0 * a * x[1];
            }
            SystemKind::Rossler => {
                let (a, b, g) = (self.p(0), self.p(1), self.p(2));
                dx[0] = -x[1] - x[2];
                dx[1] = x[0] + a * x[1];
                dx[2] = b + (x[0] - g) * x[2];
            }
            SystemKind::VanDerPol => {
                let a = self.p(0);
                dx[0] = x[1];
                dx[1] = a * (1.0 - x[0] * x[0]) * x[1] - x[0];
            }
            SystemKind::Lorenz => {
                let (s, r, b) = (self.p(0), self.p(1), self.p(2));
                dx[0] = s * (x[1] - x[0]);
                dx[1] = x[0] * (r - x[2]) - x[1];
                dx[2] = x[0] * x[1] - b * x[2];
            }
        }
    }

    pub fn rhs(&self, x: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.dim()];
        self.rhs_into(x, &mut dx);
        dx
    }

    /// Each equation expanded into (monomial exponents, coefficient) pairs.
    fn monomial_expansion(&self) -> Vec<Vec<(Vec<u32>, f64)>> {
        let t2 = |a: u32, b: u32| vec![a, b];
        let t3 = |a: u32, b: u32, c: u32| vec![a, b, c];
        match self.kind {
            SystemKind::LinearDamped => {
                let (a, b) = (self.p(0), self.p(1));
                vec![
                    vec![(t2(1, 0), -a), (t2(0, 1), b)],
                    vec![(t2(1, 0), -b), (t2(0, 1), -a)],
                ]
            }
            SystemKind::CubicDamped => {
                let (a, b) = (self.p(0), self.p(1));
                vec![
                    vec![(t2(3, 0), -a), (t2(0, 3), b)],
                    vec![(t2(3, 0), -b), (t2(0, 3), -a)],
                ]
            }
            SystemKind::Duffing => {
                let (a, b, g) = (self.p(0), self.p(1), self.p(2));
                vec![
                    vec![(t2(0, 1), 1.0)],
                    vec![(t2(0, 1), -a), (t2(1, 0), -b), (t2(3, 0), -g)],
                ]
            }
            SystemKind::Hopf => {
                let (a, b, g) = (self.p(0), self.p(1), self.p(2));
                vec![
                    vec![(t2(1, 0), -a), (t2(0, 1), -b), (t2(3, 0), -g), (t2(1, 2), -g)],
                    vec![(t2(1, 0), b), (t2(0, 1), -a), (t2(2, 1), -g), (t2(0, 3), -g)],
                ]
            }
            SystemKind::LotkaVolterra => {
                let (a, b) = (self.p(0), self.p(1));
                vec![
                    vec![(t2(1, 0), a), (t2(1, 1), -b)],
                    vec![(t2(1, 1), b), (t2(0, 1), -2.0 * a)],
                ]
            }
            SystemKind::Rossler => {
                let (a, b, g) = (self.p(0), self.p(1), self.p(2));
                vec![
                    vec![(t3(0, 1, 0), -1.0), (t3(0, 0, 1), -1.0)],
                    vec![(t3(1, 0, 0), 1.0), (t3(0, 1, 0), a)],
                    vec![(t3(0, 0, 0), b), (t3(0, 0, 1), -g), (t3(1, 0, 1), 1.0)],
                ]
            }
            SystemKind::VanDerPol => {
                let a = self.p(0);
                vec![
                    vec![(t2(0, 1), 1.0)],
                    vec![(t2(1, 0), -1.0), (t2(0, 1), a), (t2(2, 1), -a)],
                ]
            }
            SystemKind::Lorenz => {
                let (s, r, b) = (self.p(0), self.p(1), self.p(2));
                vec![
                    vec![(t3(1, 0, 0), -s), (t3(0, 1, 0), s)],
                    vec![(t3(1, 0, 0), r), (t3(0, 1, 0), -1.0), (t3(1, 0, 1), -1.0)],
                    vec![(t3(1, 1, 0), 1.0), (t3(0, 0, 1), -b)],
                ]
            }
        }
    }

    /// Ground-truth coefficients in the cubic polynomial library.
    pub fn true_coefficients(&self) -> CoefficientMatrix {
        let lib = FeatureLibrary::cubic(self.dim());
        let mut values = DMatrix::zeros(self.dim(), lib.len());
        for (row, terms) in self.monomial_expansion().into_iter().enumerate() {
            for (exps, c) in terms {
                let j = lib.index_of(&exps).expect("expansion term missing from cubic library");
                values[(row, j)] += c;
            }
        }
        CoefficientMatrix::new(lib, values).expect("shapes agree by construction")
    }
}

/// Nonzero pattern of the true coefficients (`n × p`).
pub fn true_support(system: &OdeSystem) -> Vec<Vec<bool>> {
    system.true_coefficients().support(0.0)
}

/// Per-equation number of nonzero true coefficients.
pub fn true_sparsity(system: &OdeSystem) -> Vec<usize> {
    true_support(system)
        .iter()
        .map(|row| row.iter().filter(|&&b| b).count())
        .collect()
}

/// True states and derivatives on a uniform grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `n × m`
    pub states: DMatrix<f64>,
    /// `n × m`, the vector field evaluated at each sampled state.
    pub derivatives: DMatrix<f64>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dt(&self) -> f64 {
        grid_spacing(&self.times)
    }
}

/// Noisy observations of a trajectory.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub times: Vec<f64>,
    /// `k × m`
    pub observations: DMatrix<f64>,
    pub noise_std: f64,
    pub relative_noise: f64,
}

impl MeasurementSet {
    /// Wrap observations that did not come from [`add_noise`].
    pub fn from_observations(times: Vec<f64>, observations: DMatrix<f64>) -> Result<Self> {
        if times.len() != observations.ncols() {
            return Err(config(format!(
                "{} times but {} observation columns",
                times.len(),
                observations.ncols()
            )));
        }
        Ok(Self {
            times,
            observations,
            noise_std: 0.0,
            relative_noise: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dt(&self) -> f64 {
        grid_spacing(&self.times)
    }
}

pub(crate) fn grid_spacing(times: &[f64]) -> f64 {
    if times.len() < 2 {
        return 0.0;
    }
    (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
}

/// Check that `times` is strictly increasing with constant spacing.
pub fn check_uniform_grid(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(config("need at least two samples"));
    }
    let dt = grid_spacing(times);
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(config("time grid must be strictly increasing"));
    }
    for (i, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > 1e-6 * dt {
            return Err(config(format!("non-uniform spacing at sample {}", i + 1)));
        }
    }
    Ok(dt)
}

/// Number of grid samples covering `[0, duration]` at spacing `dt`.
pub fn grid_len(duration: f64, dt: f64) -> Result<usize> {
    if !(duration > 0.0) || !(dt > 0.0) {
        return Err(config("duration and dt must be positive"));
    }
    let ratio = duration / dt;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-6 * ratio.max(1.0) {
        return Err(config(format!("dt = {dt} does not divide duration = {duration}")));
    }
    if steps < 10.0 {
        return Err(config("duration must span at least 10 steps of dt"));
    }
    Ok(steps as usize + 1)
}

/// Outcome of integrating an arbitrary vector field on a grid.
#[derive(Debug, Clone)]
pub struct FieldIntegration {
    /// Samples reached before any failure.
    pub trajectory: Trajectory,
    pub failure: Option<Failure>,
}

pub(crate) fn integrate_field<F>(
    field: F,
    x0: &[f64],
    duration: f64,
    dt: f64,
    opts: &IntegratorOptions,
) -> Result<FieldIntegration>
where
    F: Fn(&[f64], &mut [f64]),
{
    let m = grid_len(duration, dt)?;
    let sol = integrate_on_grid(&field, x0, m, dt, opts);
    let n = x0.len();
    let reached = sol.states.len();
    let mut states = DMatrix::zeros(n, reached);
    let mut derivatives = DMatrix::zeros(n, reached);
    let mut dx = vec![0.0; n];
    for (i, s) in sol.states.iter().enumerate() {
        field(s, &mut dx);
        for r in 0..n {
            states[(r, i)] = s[r];
            derivatives[(r, i)] = dx[r];
        }
    }
    let times = (0..reached).map(|i| i as f64 * dt).collect();
    Ok(FieldIntegration {
        trajectory: Trajectory {
            times,
            states,
            derivatives,
        },
        failure: sol.failure,
    })
}

/// Simulate `system` from `x0` with the default tolerances.
pub fn integrate(system: &OdeSystem, x0: &[f64], duration: f64, dt: f64) -> Result<Trajectory> {
    integrate_with(system, x0, duration, dt, &IntegratorOptions::default())
}

pub fn integrate_with(
    system: &OdeSystem,
    x0: &[f64],
    duration: f64,
    dt: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    if x0.len() != system.dim() {
        return Err(config(format!(
            "{} needs a {}-dimensional initial condition",
            system.name(),
            system.dim()
        )));
    }
    let out = integrate_field(|x, dx| system.rhs_into(x, dx), x0, duration, dt, opts)?;
    match out.failure {
        None => Ok(out.trajectory),
        Some(Failure::Diverged { time }) => Err(Error::Divergence { time }),
        Some(Failure::Stalled { time, reason }) => Err(Error::Stalled { time, reason }),
    }
}

/// Draw an initial condition from the system's distribution.
pub fn sample_initial_condition<R: Rng + ?Sized>(system: &OdeSystem, rng: &mut R) -> Vec<f64> {
    let var = system.ic_variance;
    match system.ic_distribution {
        IcDistribution::Normal => system
            .ic_mean
            .iter()
            .map(|&mu| Normal::new(mu, var.sqrt()).expect("variance is positive").sample(rng))
            .collect(),
        IcDistribution::Gamma => system
            .ic_mean
            .iter()
            .map(|&mu| {
                // shape * scale = mu, shape * scale^2 = var
                let shape = mu * mu / var;
                let scale = var / mu;
                Gamma::new(shape, scale)
                    .expect("gamma mean must be positive")
                    .sample(rng)
            })
            .collect(),
    }
}

/// How a relative noise level maps to a noise standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRule {
    /// `sigma^2 = eta * mean(X^2)`
    #[default]
    VarianceRatio,
    /// `sigma = eta * sqrt(mean(X^2))`
    StdRatio,
}

impl NoiseRule {
    pub fn noise_std(self, relative_noise: f64, mean_square: f64) -> f64 {
        match self {
            NoiseRule::VarianceRatio => (relative_noise * mean_square).sqrt(),
            NoiseRule::StdRatio => relative_noise * mean_square.sqrt(),
        }
    }
}

/// Add i.i.d. Gaussian noise scaled to `relative_noise` times the mean squared state.
pub fn add_noise<R: Rng + ?Sized>(traj: &Trajectory, relative_noise: f64, rng: &mut R) -> Result<MeasurementSet> {
    add_noise_with_rule(traj, relative_noise, NoiseRule::VarianceRatio, rng)
}

pub fn add_noise_with_rule<R: Rng + ?Sized>(
    traj: &Trajectory,
    relative_noise: f64,
    rule: NoiseRule,
    rng: &mut R,
) -> Result<MeasurementSet> {
    if !(relative_noise >= 0.0) || !relative_noise.is_finite() {
        return Err(config("relative noise must be finite and non-negative"));
    }
    let count = traj.states.len();
    if count == 0 {
        return Err(config("empty trajectory"));
    }
    let mean_square = traj.states.iter().map(|v| v * v).sum::<f64>() / count as f64;
    if relative_noise > 0.0 && mean_square == 0.0 {
        return Err(Error::DegenerateSignal);
    }
    let noise_std = rule.noise_std(relative_noise, mean_square);
    let mut observations = traj.states.clone();
    if noise_std > 0.0 {
        for v in observations.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v += noise_std * e;
        }
    }
    Ok(MeasurementSet {
        times: traj.times.clone(),
        observations,
        noise_std,
        relative_noise,
    })
}
