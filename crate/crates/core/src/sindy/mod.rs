//! Sparse regression of derivatives onto a polynomial library.

mod ensemble;
mod library;
mod regression;

use std::cell::RefCell;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub(crate) use ensemble::aggregate_median;
pub use ensemble::{ensemble_fit, median, EnsembleOptions, EnsembleResult};
pub use library::FeatureLibrary;
pub use regression::{fit_fixed_sparsity, FitOptions, FitResult, SearchStrategy, Sparsity, SubsetSearch};

use crate::error::{config, Result};
use crate::integrator::{Failure, IntegratorOptions};
use crate::systems::{integrate_field, Trajectory};

/// Coefficients `Ξ` (`n × p`) of a model `dx/dt = Ξ Θ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    library: FeatureLibrary,
    values: DMatrix<f64>,
}

impl CoefficientMatrix {
    pub fn new(library: FeatureLibrary, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != library.len() || values.nrows() != library.dim() {
            return Err(config(format!(
                "coefficient matrix is {}x{}, library needs {}x{}",
                values.nrows(),
                values.ncols(),
                library.dim(),
                library.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(config("coefficients must be finite"));
        }
        Ok(Self { library, values })
    }

    pub fn zeros(library: FeatureLibrary) -> Self {
        let values = DMatrix::zeros(library.dim(), library.len());
        Self { library, values }
    }

    pub fn library(&self) -> &FeatureLibrary {
        &self.library
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.values
    }

    pub fn n_equations(&self) -> usize {
        self.values.nrows()
    }

    /// Entries with `|value| > tol`.
    pub fn support(&self, tol: f64) -> Vec<Vec<bool>> {
        self.values
            .row_iter()
            .map(|row| row.iter().map(|v| v.abs() > tol).collect())
            .collect()
    }

    /// `Ξ Θ(x)` at a single state.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let theta = self.library.evaluate_point(x);
        let mut out = vec![0.0; self.n_equations()];
        self.apply_features(&theta, &mut out);
        out
    }

    fn apply_features(&self, theta: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = theta.iter().enumerate().map(|(j, t)| self.values[(r, j)] * t).sum();
        }
    }

    /// One line per equation, e.g. `ẋ1 = -0.1 x1 + 2 x2`.
    pub fn equations(&self) -> Vec<String> {
        (0..self.n_equations())
            .map(|r| {
                let mut rhs = String::new();
                for j in 0..self.library.len() {
                    let c = self.values[(r, j)];
                    if c == 0.0 {
                        continue;
                    }
                    let mag = format_coefficient(c.abs());
                    let term = self.library.term_name(j);
                    let body = if term == "1" { mag } else { format!("{mag} {term}") };
                    if rhs.is_empty() {
                        if c < 0.0 {
                            rhs.push('-');
                        }
                        rhs.push_str(&body);
                    } else {
                        rhs.push_str(if c < 0.0 { " - " } else { " + " });
                        rhs.push_str(&body);
                    }
                }
                if rhs.is_empty() {
                    rhs.push('0');
                }
                format!("ẋ{} = {}", r + 1, rhs)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&CoefficientJson::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: CoefficientJson = serde_json::from_str(text)?;
        raw.try_into()
    }
}

fn format_coefficient(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

#[derive(Serialize, Deserialize)]
struct LibraryJson {
    dim: usize,
    degree: u32,
    terms: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct CoefficientJson {
    library: LibraryJson,
    values: Vec<Vec<f64>>,
}

impl From<&CoefficientMatrix> for CoefficientJson {
    fn from(c: &CoefficientMatrix) -> Self {
        Self {
            library: LibraryJson {
                dim: c.library.dim(),
                degree: c.library.degree(),
                terms: c.library.terms().to_vec(),
            },
            values: c.values.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

impl TryFrom<CoefficientJson> for CoefficientMatrix {
    type Error = crate::Error;

    fn try_from(raw: CoefficientJson) -> Result<Self> {
        let library = FeatureLibrary::from_terms(raw.library.dim, raw.library.terms)?;
        if library.degree() > raw.library.degree {
            return Err(config("library terms exceed the declared degree"));
        }
        let n = raw.values.len();
        let p = library.len();
        if raw.values.iter().any(|r| r.len() != p) {
            return Err(config("every coefficient row needs one value per term"));
        }
        let values = DMatrix::from_fn(n, p, |r, j| raw.values[r][j]);
        CoefficientMatrix::new(library, values)
    }
}

/// Forward simulation of a discovered model.
#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    /// Samples up to the horizon, or up to blow-up when `diverged`.
    pub trajectory: Trajectory,
    pub diverged: bool,
    /// Time at which integration failed, if it did.
    pub failure_time: Option<f64>,
}

/// Integrate `dx/dt = Ξ Θ(x)` with the same integrator and blow-up rule as the
/// benchmark systems.
pub fn simulate_model(xi: &CoefficientMatrix, x0: &[f64], duration: f64, dt: f64) -> Result<SimulationOutcome> {
    simulate_model_with(xi, x0, duration, dt, &IntegratorOptions::default())
}

pub fn simulate_model_with(
    xi: &CoefficientMatrix,
    x0: &[f64],
    duration: f64,
    dt: f64,
    opts: &IntegratorOptions,
) -> Result<SimulationOutcome> {
    if x0.len() != xi.library.dim() {
        return Err(config("initial condition dimension does not match the model"));
    }
    let buffer = RefCell::new(vec![0.0; xi.library.len()]);
    let field = |x: &[f64], dx: &mut [f64]| {
        let mut theta = buffer.borrow_mut();
        xi.library.evaluate_point_into(x, &mut theta);
        xi.apply_features(&theta, dx);
    };
    let out = integrate_field(field, x0, duration, dt, opts)?;
    let failure_time = out.failure.as_ref().map(Failure::time);
    Ok(SimulationOutcome {
        trajectory: out.trajectory,
        diverged: out.failure.is_some(),
        failure_time,
    })
}
