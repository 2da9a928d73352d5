//! Dense Cholesky factorization for the small inducing-point system.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Factors a symmetric positive-definite matrix. Only the lower
    /// triangle of `a` is read.
    pub fn factor(a: ArrayView2<'_, f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dims("cholesky input", "square", format!("{:?}", a.dim())));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut diag = a[[j, j]];
            for k in 0..j {
                diag -= l[[j, k]] * l[[j, k]];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    index: j,
                    pivot: diag,
                });
            }
            let ljj = diag.sqrt();
            l[[j, j]] = ljj;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.l
    }

    /// Smallest diagonal entry of `L` squared, i.e. the smallest pivot.
    pub fn min_pivot(&self) -> f64 {
        self.l
            .diag()
            .iter()
            .map(|d| d * d)
            .fold(f64::INFINITY, f64::min)
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let n = self.dim();
        if b.nrows() != n {
            return Err(Error::dims("cholesky solve rhs", n, b.nrows()));
        }
        let mut x = b.to_owned();
        for c in 0..x.ncols() {
            // forward: L y = b
            for i in 0..n {
                let mut s = x[[i, c]];
                for k in 0..i {
                    s -= self.l[[i, k]] * x[[k, c]];
                }
                x[[i, c]] = s / self.l[[i, i]];
            }
            // backward: Lᵀ x = y
            for i in (0..n).rev() {
                let mut s = x[[i, c]];
                for k in (i + 1)..n {
                    s -= self.l[[k, i]] * x[[k, c]];
                }
                x[[i, c]] = s / self.l[[i, i]];
            }
        }
        Ok(x)
    }
}
