use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::regression::{fit_fixed_sparsity, FitOptions, Sparsity};
use super::{CoefficientMatrix, FeatureLibrary};
use crate::error::{config, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleOptions {
    pub n_bags: usize,
    /// Fraction of columns drawn (without replacement) for each bag.
    pub bag_fraction: f64,
    pub fit: FitOptions,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            n_bags: 20,
            bag_fraction: 0.6,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub members: Vec<CoefficientMatrix>,
    /// Elementwise median of `members`.
    pub aggregate: CoefficientMatrix,
    /// Sorted column indices used by each bag.
    pub bag_indices: Vec<Vec<usize>>,
    pub n_bags: usize,
    pub bag_fraction: f64,
    /// Any member refit hit a rank-deficient support.
    pub rank_deficient: bool,
}

/// Median of a slice; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn bag_size(m: usize, fraction: f64) -> usize {
    (fraction * m as f64 + 1e-9).floor() as usize
}

/// Bagged fixed-sparsity fits aggregated by elementwise median.
///
/// One base seed is drawn from `rng`; bag `b` samples its columns from stream
/// `b` of that seed, so bags may run in parallel with results identical to a
/// sequential run.
pub fn ensemble_fit<R: Rng + ?Sized>(
    library: &FeatureLibrary,
    theta: &DMatrix<f64>,
    dxdt: &DMatrix<f64>,
    sparsity: &Sparsity,
    opts: &EnsembleOptions,
    rng: &mut R,
) -> Result<EnsembleResult> {
    if opts.n_bags == 0 {
        return Err(config("ensemble needs at least one bag"));
    }
    if !(opts.bag_fraction > 0.0 && opts.bag_fraction <= 1.0) {
        return Err(config("bag fraction must lie in (0, 1]"));
    }
    let m = theta.ncols();
    let size = bag_size(m, opts.bag_fraction);
    let kmax = match sparsity {
        Sparsity::PerRow(ks) => ks.iter().copied().max().unwrap_or(0),
        Sparsity::Total(k) => (*k).min(library.len()),
    };
    if size <= kmax {
        return Err(config(format!(
            "bags of {size} samples cannot determine {kmax} coefficients"
        )));
    }
    let base: u64 = rng.random();
    let bag_indices: Vec<Vec<usize>> = (0..opts.n_bags)
        .map(|b| {
            let mut stream = ChaCha8Rng::seed_from_u64(base);
            stream.set_stream(b as u64);
            let mut idx = index::sample(&mut stream, m, size).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect();

    let fits: Vec<_> = bag_indices
        .par_iter()
        .map(|idx| {
            let th = theta.select_columns(idx);
            let dx = dxdt.select_columns(idx);
            fit_fixed_sparsity(library, &th, &dx, sparsity, &opts.fit)
        })
        .collect::<Result<_>>()?;

    let rank_deficient = fits.iter().any(|f| f.rank_deficient);
    let members: Vec<CoefficientMatrix> = fits.into_iter().map(|f| f.coefficients).collect();
    let aggregate = aggregate_median(library, &members)?;
    Ok(EnsembleResult {
        members,
        aggregate,
        bag_indices,
        n_bags: opts.n_bags,
        bag_fraction: opts.bag_fraction,
        rank_deficient,
    })
}

pub(crate) fn aggregate_median(library: &FeatureLibrary, members: &[CoefficientMatrix]) -> Result<CoefficientMatrix> {
    let (n, p) = (library.dim(), library.len());
    let mut column = vec![0.0; members.len()];
    let values = DMatrix::from_fn(n, p, |r, j| {
        for (c, mem) in column.iter_mut().zip(members) {
            *c = mem.values()[(r, j)];
        }
        median(&column)
    });
    CoefficientMatrix::new(library.clone(), values)
}
