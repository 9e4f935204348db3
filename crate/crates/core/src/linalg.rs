use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Cholesky factor `L L' = A` of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
}

impl Factor {
    /// `rho` only labels the failure diagnostic.
    pub fn new(matrix: DMatrix<f64>, rho: f64) -> Result<Self> {
        let n = matrix.nrows();
        Cholesky::new(matrix)
            .map(|chol| Self { chol })
            .ok_or(Error::NotPositiveDefinite { n, rho })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Lower-triangular factor.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `log |A|` as twice the sum of the log diagonal of `L`.
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// `L^-1 b`.
    pub fn whiten(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("Cholesky diagonal is nonzero")
    }

    /// `L^-1 B`.
    pub fn whiten_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("Cholesky diagonal is nonzero")
    }

    /// `b' A^-1 b` through one triangular solve.
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        self.whiten(b).norm_squared()
    }

    /// `A^-1 b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `A^-1 B`.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L x`.
    pub fn mul_l(&self, x: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let n = l.nrows();
        let mut out = DVector::zeros(n);
        // l_dirty keeps stale values above the diagonal; only read the lower part.
        for j in 0..n {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for i in j..n {
                out[i] += l[(i, j)] * xj;
            }
        }
        out
    }
}
