//! Banded linear least squares by row-wise Givens rotations.
//!
//! Rows are streamed into an upper-triangular factor `R` with upper bandwidth
//! `w`, so the whole solve is `O(rows · w^2)`. Givens rotations applied one row
//! at a time are backward stable row by row, which keeps the solve accurate
//! when row weights differ by many orders of magnitude (a heavily penalized
//! process model next to unit-weight measurements, or equality constraints
//! imposed by large weights).

/// The factor has a (numerically) zero pivot in column `column`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankDeficient {
    pub column: usize,
}

#[derive(Debug, Clone)]
pub struct BandedLeastSquares {
    n: usize,
    width: usize,
    // row j holds R[j, j..=j+width]
    r: Vec<f64>,
    qtb: Vec<f64>,
    residual_sq: f64,
    last_first: usize,
    scratch: Vec<f64>,
}

impl BandedLeastSquares {
    /// Problem with `n` unknowns whose rows each span at most `width + 1`
    /// consecutive columns.
    pub fn new(n: usize, width: usize) -> Self {
        Self {
            n,
            width,
            r: vec![0.0; n * (width + 1)],
            qtb: vec![0.0; n],
            residual_sq: 0.0,
            last_first: 0,
            scratch: vec![0.0; width + 1],
        }
    }

    pub fn n_unknowns(&self) -> usize {
        self.n
    }

    /// Add the row `sum_k coeffs[k] * x[first + k] = rhs`.
    ///
    /// Rows must arrive in non-decreasing order of `first`; this is what keeps
    /// the fill inside the band.
    pub fn add_row(&mut self, first: usize, coeffs: &[f64], rhs: f64) {
        let w = self.width;
        assert!(coeffs.len() <= w + 1, "row wider than the band");
        assert!(first + coeffs.len() <= self.n, "row outside the unknowns");
        assert!(first >= self.last_first, "rows must be added in column order");
        self.last_first = first;

        let row = &mut self.scratch;
        row.iter_mut().for_each(|v| *v = 0.0);
        row[..coeffs.len()].copy_from_slice(coeffs);
        let mut b = rhs;
        // row[k] is the entry in column first + k + shift
        let mut shift = 0;
        while shift < w + 1 && first + shift < self.n {
            let j = first + shift;
            let a = row[0];
            if a != 0.0 {
                let rj = &mut self.r[j * (w + 1)..(j + 1) * (w + 1)];
                let d = rj[0];
                let h = d.hypot(a);
                let (c, s) = (d / h, a / h);
                for k in 0..=w {
                    let (p, q) = (rj[k], row[k]);
                    rj[k] = c * p + s * q;
                    row[k] = c * q - s * p;
                }
                let (p, q) = (self.qtb[j], b);
                self.qtb[j] = c * p + s * q;
                b = c * q - s * p;
            }
            row.rotate_left(1);
            row[w] = 0.0;
            shift += 1;
            if row.iter().all(|&v| v == 0.0) {
                break;
            }
        }
        self.residual_sq += b * b;
    }

    /// Squared norm of the part of the right-hand side that no solution can fit.
    pub fn residual_sq(&self) -> f64 {
        self.residual_sq
    }

    /// Back substitution. Pivots below `rel_tol` times the largest pivot count as zero.
    pub fn solve(&self, rel_tol: f64) -> Result<Vec<f64>, RankDeficient> {
        let w = self.width;
        let n = self.n;
        let max_pivot = (0..n).map(|j| self.r[j * (w + 1)].abs()).fold(0.0, f64::max);
        let mut x = vec![0.0; n];
        for j in (0..n).rev() {
            let rj = &self.r[j * (w + 1)..(j + 1) * (w + 1)];
            let pivot = rj[0];
            if !(pivot.abs() > rel_tol * max_pivot) {
                return Err(RankDeficient { column: j });
            }
            let mut v = self.qtb[j];
            for k in 1..=w.min(n - 1 - j) {
                v -= rj[k] * x[j + k];
            }
            x[j] = v / pivot;
        }
        Ok(x)
    }
}
