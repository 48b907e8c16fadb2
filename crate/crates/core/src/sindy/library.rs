use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Polynomial candidate functions up to a fixed total degree.
///
/// Terms are ordered by total degree, then lexicographically by the sorted
/// variable indices that make up the monomial. For two variables and degree 3:
///
/// ```text
/// 1, x1, x2, x1^2, x1 x2, x2^2, x1^3, x1^2 x2, x1 x2^2, x2^3
/// ```
///
/// Coefficient matrices are only comparable under the same ordering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLibrary {
    dim: usize,
    degree: u32,
    terms: Vec<Vec<u32>>,
}

impl FeatureLibrary {
    pub fn new(dim: usize, degree: u32) -> Self {
        let mut terms = Vec::new();
        for d in 0..=degree as usize {
            let mut combo = vec![0usize; d];
            loop {
                let mut exps = vec![0u32; dim];
                for &v in &combo {
                    exps[v] += 1;
                }
                terms.push(exps);
                // next non-decreasing index sequence
                let mut k = d;
                while k > 0 && combo[k - 1] == dim - 1 {
                    k -= 1;
                }
                if k == 0 || dim == 0 {
                    break;
                }
                let next = combo[k - 1] + 1;
                for c in combo.iter_mut().skip(k - 1) {
                    *c = next;
                }
            }
        }
        Self { dim, degree, terms }
    }

    /// The degree-3 library used throughout the benchmarks.
    pub fn cubic(dim: usize) -> Self {
        Self::new(dim, 3)
    }

    /// Library with an explicit term list, e.g. a permuted ordering.
    pub fn from_terms(dim: usize, terms: Vec<Vec<u32>>) -> Result<Self> {
        if terms.iter().any(|t| t.len() != dim) {
            return Err(config("every term needs one exponent per state variable"));
        }
        let degree = terms.iter().map(|t| t.iter().sum::<u32>()).max().unwrap_or(0);
        Ok(Self { dim, degree, terms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn terms(&self) -> &[Vec<u32>] {
        &self.terms
    }

    /// Number of candidate functions `p`.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, exponents: &[u32]) -> Option<usize> {
        self.terms.iter().position(|t| t == exponents)
    }

    /// Evaluate every term at one state, writing `p` values into `out`.
    pub fn evaluate_point_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (o, term) in out.iter_mut().zip(&self.terms) {
            let mut v = 1.0;
            for (xi, &e) in x.iter().zip(term) {
                for _ in 0..e {
                    v *= xi;
                }
            }
            *o = v;
        }
    }

    pub fn evaluate_point(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.evaluate_point_into(x, &mut out);
        out
    }

    /// `Θ(X)`: `p × m` matrix whose column `i` holds every term evaluated at `X[:, i]`.
    pub fn evaluate(&self, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if states.nrows() != self.dim {
            return Err(config(format!(
                "library expects {} state rows, got {}",
                self.dim,
                states.nrows()
            )));
        }
        let m = states.ncols();
        let mut theta = DMatrix::zeros(self.len(), m);
        let mut x = vec![0.0; self.dim];
        let mut col = vec![0.0; self.len()];
        for i in 0..m {
            for (r, xr) in x.iter_mut().enumerate() {
                *xr = states[(r, i)];
            }
            self.evaluate_point_into(&x, &mut col);
            for (j, v) in col.iter().enumerate() {
                theta[(j, i)] = *v;
            }
        }
        Ok(theta)
    }

    /// Human-readable name of term `j`, e.g. `x1^2 x3`.
    pub fn term_name(&self, j: usize) -> String {
        let parts: Vec<String> = self.terms[j]
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(v, &e)| {
                if e == 1 {
                    format!("x{}", v + 1)
                } else {
                    format!("x{}^{}", v + 1, e)
                }
            })
            .collect();
        if parts.is_empty() {
            "1".to_string()
        } else {
            parts.join(" ")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_counts() {
        assert_eq!(FeatureLibrary::cubic(1).len(), 4);
        assert_eq!(FeatureLibrary::cubic(2).len(), 10);
        assert_eq!(FeatureLibrary::cubic(3).len(), 20);
        assert_eq!(FeatureLibrary::new(4, 2).len(), 15);
    }

    #[test]
    fn two_variable_ordering() {
        let lib = FeatureLibrary::cubic(2);
        let names: Vec<String> = (0..lib.len()).map(|j| lib.term_name(j)).collect();
        assert_eq!(
            names,
            ["1", "x1", "x2", "x1^2", "x1 x2", "x2^2", "x1^3", "x1^2 x2", "x1 x2^2", "x2^3"]
        );
    }

    #[test]
    fn three_variable_quadratics() {
        let lib = FeatureLibrary::cubic(3);
        let names: Vec<String> = (4..10).map(|j| lib.term_name(j)).collect();
        assert_eq!(names, ["x1^2", "x1 x2", "x1 x3", "x2^2", "x2 x3", "x3^2"]);
        assert_eq!(lib.term_name(19), "x3^3");
    }

    #[test]
    fn evaluation_at_a_point() {
        let lib = FeatureLibrary::cubic(2);
        let x = DMatrix::from_column_slice(2, 1, &[2.0, 3.0]);
        let theta = lib.evaluate(&x).unwrap();
        let expected = [1.0, 2.0, 3.0, 4.0, 6.0, 9.0, 8.0, 12.0, 18.0, 27.0];
        assert_eq!(theta.as_slice(), &expected);
    }

    #[test]
    fn zero_state_leaves_only_constant() {
        let lib = FeatureLibrary::cubic(3);
        let theta = lib.evaluate(&DMatrix::zeros(3, 4)).unwrap();
        assert_eq!(theta.nrows(), 20);
        for i in 0..4 {
            assert_eq!(theta[(0, i)], 1.0);
            assert!(theta.column(i).iter().skip(1).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let lib = FeatureLibrary::cubic(2);
        assert!(lib.evaluate(&DMatrix::zeros(3, 5)).is_err());
    }
}
