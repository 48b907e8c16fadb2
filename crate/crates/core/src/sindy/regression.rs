//! Best-subset regression with a fixed number of terms per equation.
//!
//! For each equation the support `S` minimizes the ridge-regularized residual
//!
//! ```text
//! min_xi |y - xi Θ_S|^2 + ridge |xi|^2  =  y·y - c_S^T (G_SS + ridge I)^{-1} c_S
//! ```
//!
//! with `G = Θ Θ^T` and `c = Θ y`. Small problems are enumerated exhaustively;
//! larger ones fall back to forward greedy selection refined by best-swap
//! local search. The chosen support is then refit by plain least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CoefficientMatrix, FeatureLibrary};
use crate::error::{config, Result};

/// Target number of nonzero coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    /// `k_r` nonzeros in equation `r`.
    PerRow(Vec<usize>),
    /// Total nonzeros across all equations, allocated to minimize the summed residual.
    Total(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    /// Exhaustive when the number of supports is at most `exhaustive_limit`.
    Auto,
    Exhaustive,
    GreedySwap,
    /// Forward selection only; exists for comparisons.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// L2 penalty used while ranking supports. The final refit is unpenalized.
    pub ridge: f64,
    pub exhaustive_limit: u64,
    pub strategy: SearchStrategy,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            ridge: 0.01,
            exhaustive_limit: 200_000,
            strategy: SearchStrategy::Auto,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: CoefficientMatrix,
    /// Sorted term indices per equation.
    pub supports: Vec<Vec<usize>>,
    /// Ridge-regularized residual of each chosen support.
    pub search_residuals: Vec<f64>,
    /// Some support matrix was rank deficient; its refit is the minimum-norm solution.
    pub rank_deficient: bool,
}

/// Number of `k`-subsets of `p` items, saturating.
pub(crate) fn n_choose_k(p: usize, k: usize) -> u64 {
    if k > p {
        return 0;
    }
    let k = k.min(p - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (p - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Shared Gram data for ranking supports of one feature matrix.
///
/// Columns are rescaled to unit norm internally; the objective is unchanged
/// (the ridge weight is rescaled to match), only the conditioning improves.
#[derive(Debug, Clone)]
pub struct SubsetSearch {
    gram: DMatrix<f64>,
    scale: Vec<f64>,
    ridge_diag: Vec<f64>,
}

/// Right-hand side of one equation in the scaled coordinates.
#[derive(Debug, Clone)]
pub struct Target {
    c: Vec<f64>,
    yy: f64,
}

impl SubsetSearch {
    /// `theta` is `p × m`.
    pub fn new(theta: &DMatrix<f64>, ridge: f64) -> Self {
        let raw = theta * theta.transpose();
        let p = raw.nrows();
        let scale: Vec<f64> = (0..p)
            .map(|j| {
                let d = raw[(j, j)].sqrt();
                if d > 0.0 && d.is_finite() {
                    d
                } else {
                    1.0
                }
            })
            .collect();
        let gram = DMatrix::from_fn(p, p, |i, j| raw[(i, j)] / (scale[i] * scale[j]));
        let ridge_diag = scale.iter().map(|s| ridge / (s * s)).collect();
        Self {
            gram,
            scale,
            ridge_diag,
        }
    }

    pub fn n_features(&self) -> usize {
        self.scale.len()
    }

    /// `y` is one row of the derivative matrix (length `m`).
    pub fn target(&self, theta: &DMatrix<f64>, y: &[f64]) -> Target {
        let yv = DVector::from_column_slice(y);
        let c = theta * &yv;
        Target {
            c: c.iter().zip(&self.scale).map(|(v, s)| v / s).collect(),
            yy: yv.norm_squared(),
        }
    }

    /// Ridge-regularized residual of `support`.
    pub fn residual(&self, target: &Target, support: &[usize]) -> f64 {
        let mut work = Vec::new();
        self.residual_with(target, support, &mut work)
    }

    fn residual_with(&self, target: &Target, support: &[usize], work: &mut Vec<f64>) -> f64 {
        match self.explained(target, support, work) {
            Some(e) => target.yy - e,
            None => target.yy - self.explained_pinv(target, support),
        }
    }

    /// `c_S^T (G_SS + D)^{-1} c_S` by an in-place Cholesky; `None` if not positive definite.
    fn explained(&self, target: &Target, support: &[usize], work: &mut Vec<f64>) -> Option<f64> {
        let k = support.len();
        work.clear();
        work.resize(k * k + k, 0.0);
        let (l, y) = work.split_at_mut(k * k);
        for a in 0..k {
            for b in 0..=a {
                let mut v = self.gram[(support[a], support[b])];
                if a == b {
                    v += self.ridge_diag[support[a]];
                }
                for t in 0..b {
                    v -= l[a * k + t] * l[b * k + t];
                }
                if a == b {
                    if !(v > 1e-14) {
                        return None;
                    }
                    l[a * k + a] = v.sqrt();
                } else {
                    l[a * k + b] = v / l[b * k + b];
                }
            }
        }
        let mut acc = 0.0;
        for a in 0..k {
            let mut v = target.c[support[a]];
            for t in 0..a {
                v -= l[a * k + t] * y[t];
            }
            y[a] = v / l[a * k + a];
            acc += y[a] * y[a];
        }
        Some(acc)
    }

    fn explained_pinv(&self, target: &Target, support: &[usize]) -> f64 {
        let k = support.len();
        let g = DMatrix::from_fn(k, k, |a, b| {
            self.gram[(support[a], support[b])] + if a == b { self.ridge_diag[support[a]] } else { 0.0 }
        });
        let c = DVector::from_fn(k, |a, _| target.c[support[a]]);
        let svd = g.svd(true, true);
        let tol = 1e-12 * svd.singular_values.max();
        match svd.solve(&c, tol) {
            Ok(x) => c.dot(&x),
            Err(_) => 0.0,
        }
    }

    /// Best support of size `k` by enumerating every subset. Ties keep the
    /// lexicographically first support.
    pub fn exhaustive(&self, target: &Target, k: usize) -> (Vec<usize>, f64) {
        let p = self.n_features();
        if k == 0 {
            return (Vec::new(), target.yy);
        }
        let mut combo: Vec<usize> = (0..k).collect();
        let mut work = Vec::new();
        let mut best = combo.clone();
        let mut best_res = self.residual_with(target, &combo, &mut work);
        loop {
            let mut i = k;
            while i > 0 && combo[i - 1] == p - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            combo[i - 1] += 1;
            for j in i..k {
                combo[j] = combo[j - 1] + 1;
            }
            let r = self.residual_with(target, &combo, &mut work);
            if r < best_res {
                best_res = r;
                best.copy_from_slice(&combo);
            }
        }
        (best, best_res)
    }

    /// Forward selection: repeatedly add the feature that lowers the residual most.
    pub fn greedy(&self, target: &Target, k: usize) -> (Vec<usize>, f64) {
        let p = self.n_features();
        let mut support: Vec<usize> = Vec::with_capacity(k);
        let mut res = target.yy;
        let mut work = Vec::new();
        let mut trial = Vec::with_capacity(k);
        for _ in 0..k {
            let mut best: Option<(usize, f64)> = None;
            for j in (0..p).filter(|j| !support.contains(j)) {
                trial.clear();
                trial.extend_from_slice(&support);
                trial.push(j);
                let r = self.residual_with(target, &trial, &mut work);
                if best.is_none_or(|(_, b)| r < b) {
                    best = Some((j, r));
                }
            }
            let (j, r) = best.expect("k <= p");
            support.push(j);
            res = r;
        }
        support.sort_unstable();
        (support, res)
    }

    /// Greedy start, then apply the best improving single swap until none is left.
    pub fn greedy_swap(&self, target: &Target, k: usize) -> (Vec<usize>, f64) {
        let (mut support, mut res) = self.greedy(target, k);
        let p = self.n_features();
        let mut work = Vec::new();
        let mut trial = support.clone();
        loop {
            let mut best: Option<(usize, usize, f64)> = None;
            for pos in 0..support.len() {
                for j in (0..p).filter(|j| !support.contains(j)) {
                    trial.copy_from_slice(&support);
                    trial[pos] = j;
                    let r = self.residual_with(target, &trial, &mut work);
                    if r < res - 1e-14 * res.abs() && best.is_none_or(|(_, _, b)| r < b) {
                        best = Some((pos, j, r));
                    }
                }
            }
            match best {
                Some((pos, j, r)) => {
                    support[pos] = j;
                    res = r;
                }
                None => break,
            }
        }
        support.sort_unstable();
        (support, res)
    }

    pub fn search(&self, target: &Target, k: usize, opts: &FitOptions) -> (Vec<usize>, f64) {
        let p = self.n_features();
        match opts.strategy {
            SearchStrategy::Exhaustive => self.exhaustive(target, k),
            SearchStrategy::GreedySwap => self.greedy_swap(target, k),
            SearchStrategy::Greedy => self.greedy(target, k),
            SearchStrategy::Auto => {
                if n_choose_k(p, k) <= opts.exhaustive_limit {
                    self.exhaustive(target, k)
                } else {
                    self.greedy_swap(target, k)
                }
            }
        }
    }
}

/// Unpenalized least squares of `y` on the rows `support` of `theta`.
/// Returns the coefficients and whether the design was rank deficient.
pub(crate) fn refit(theta: &DMatrix<f64>, y: &[f64], support: &[usize]) -> (Vec<f64>, bool) {
    let m = theta.ncols();
    let k = support.len();
    if k == 0 {
        return (Vec::new(), false);
    }
    let design = DMatrix::from_fn(m, k, |i, a| theta[(support[a], i)]);
    let rhs = DVector::from_column_slice(y);
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * m.max(k) as f64;
    let deficient = smax == 0.0 || svd.singular_values.iter().any(|&s| s <= tol);
    let coef = svd
        .solve(&rhs, tol)
        .map(|x| x.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; k]);
    (coef, deficient)
}

fn check_shapes(lib: &FeatureLibrary, theta: &DMatrix<f64>, dxdt: &DMatrix<f64>) -> Result<()> {
    if theta.nrows() != lib.len() {
        return Err(config(format!(
            "feature matrix has {} rows, library has {} terms",
            theta.nrows(),
            lib.len()
        )));
    }
    if dxdt.nrows() != lib.dim() {
        return Err(config(format!(
            "derivative matrix has {} rows, library dimension is {}",
            dxdt.nrows(),
            lib.dim()
        )));
    }
    if theta.ncols() != dxdt.ncols() {
        return Err(config("feature and derivative matrices disagree on sample count"));
    }
    if theta.iter().chain(dxdt.iter()).any(|v| !v.is_finite()) {
        return Err(crate::error::input("non-finite value in regression data"));
    }
    Ok(())
}

/// Choose `k` per equation from `sparsity`, solving the allocation exactly in
/// total mode by dynamic programming over per-row best subsets.
fn allocate(
    search: &SubsetSearch,
    targets: &[Target],
    sparsity: &Sparsity,
    opts: &FitOptions,
    m: usize,
) -> Result<Vec<(Vec<usize>, f64)>> {
    let p = search.n_features();
    match sparsity {
        Sparsity::PerRow(ks) => {
            if ks.len() != targets.len() {
                return Err(config(format!(
                    "sparsity has {} entries for {} equations",
                    ks.len(),
                    targets.len()
                )));
            }
            for &k in ks {
                if k == 0 || k > p {
                    return Err(config(format!("per-row sparsity {k} outside 1..={p}")));
                }
                if m <= k {
                    return Err(config(format!("{m} samples cannot determine {k} coefficients")));
                }
            }
            Ok(targets
                .iter()
                .zip(ks)
                .map(|(t, &k)| search.search(t, k, opts))
                .collect())
        }
        Sparsity::Total(total) => {
            let n = targets.len();
            if *total == 0 || *total > n * p {
                return Err(config(format!("total sparsity {total} outside 1..={}", n * p)));
            }
            let kmax = (*total).min(p);
            if m <= kmax {
                return Err(config(format!("{m} samples cannot determine {kmax} coefficients")));
            }
            let per_row: Vec<Vec<(Vec<usize>, f64)>> = targets
                .iter()
                .map(|t| (0..=kmax).map(|k| search.search(t, k, opts)).collect())
                .collect();
            // cost[r][s]: best summed residual of rows 0..=r using s terms.
            let inf = f64::INFINITY;
            let mut cost = vec![vec![inf; total + 1]; n];
            let mut choice = vec![vec![0usize; total + 1]; n];
            for s in 0..=kmax.min(*total) {
                cost[0][s] = per_row[0][s].1;
                choice[0][s] = s;
            }
            for r in 1..n {
                for s in 0..=*total {
                    for k in 0..=kmax.min(s) {
                        let c = cost[r - 1][s - k] + per_row[r][k].1;
                        if c < cost[r][s] {
                            cost[r][s] = c;
                            choice[r][s] = k;
                        }
                    }
                }
            }
            if !cost[n - 1][*total].is_finite() {
                return Err(config("total sparsity cannot be allocated"));
            }
            let mut out = vec![(Vec::new(), 0.0); n];
            let mut s = *total;
            for r in (0..n).rev() {
                let k = choice[r][s];
                out[r] = per_row[r][k].clone();
                s -= k;
            }
            Ok(out)
        }
    }
}

/// Fit `dxdt ≈ Ξ Θ` with a fixed number of nonzero coefficients.
///
/// `theta` is `p × m` (library evaluated at the states), `dxdt` is `n × m`.
pub fn fit_fixed_sparsity(
    library: &FeatureLibrary,
    theta: &DMatrix<f64>,
    dxdt: &DMatrix<f64>,
    sparsity: &Sparsity,
    opts: &FitOptions,
) -> Result<FitResult> {
    check_shapes(library, theta, dxdt)?;
    if !(opts.ridge >= 0.0) {
        return Err(config("ridge must be non-negative"));
    }
    let search = SubsetSearch::new(theta, opts.ridge);
    let rows: Vec<Vec<f64>> = dxdt.row_iter().map(|r| r.iter().copied().collect()).collect();
    let targets: Vec<Target> = rows.iter().map(|y| search.target(theta, y)).collect();
    let chosen = allocate(&search, &targets, sparsity, opts, theta.ncols())?;

    let mut values = DMatrix::zeros(library.dim(), library.len());
    let mut rank_deficient = false;
    let mut supports = Vec::with_capacity(chosen.len());
    let mut search_residuals = Vec::with_capacity(chosen.len());
    for (r, (support, res)) in chosen.into_iter().enumerate() {
        let (coef, deficient) = refit(theta, &rows[r], &support);
        rank_deficient |= deficient;
        for (&j, c) in support.iter().zip(coef) {
            values[(r, j)] = c;
        }
        supports.push(support);
        search_residuals.push(res);
    }
    Ok(FitResult {
        coefficients: CoefficientMatrix::new(library.clone(), values)?,
        supports,
        search_residuals,
        rank_deficient,
    })
}
