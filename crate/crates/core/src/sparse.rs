//! Compressed-row sparse matrices, just enough for graph diffusion.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-major compressed sparse matrix with `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != n_rows + 1 {
            return Err(Error::dims("csr row_ptr", n_rows + 1, row_ptr.len()));
        }
        if col_idx.len() != values.len() || *row_ptr.last().unwrap_or(&0) != values.len() {
            return Err(Error::dims("csr nnz", col_idx.len(), values.len()));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("csr row_ptr not monotone".into()));
        }
        if let Some(&bad) = col_idx.iter().find(|&&c| c >= n_cols) {
            return Err(Error::NodeIndexOutOfRange {
                index: bad,
                len: n_cols,
            });
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Explicit transpose. Values are copied, never recomputed, so the
    /// result is bit-exact. Column order within each output row is ascending.
    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for i in 0..self.n_cols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = next[c];
                col_idx[slot] = r;
                values[slot] = v;
                next[c] += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// `self · dense`. Each output row is reduced by a single task in
    /// storage order, so the result does not depend on the thread count.
    pub fn mul_dense(&self, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.n_cols {
            return Err(Error::dims("sparse matmul", self.n_cols, dense.nrows()));
        }
        let d = dense.ncols();
        let mut out = vec![0.0; self.n_rows * d];
        if d == 0 {
            return Ok(Array2::zeros((self.n_rows, 0)));
        }
        let dense = dense.as_standard_layout();
        let src = dense.as_slice().expect("standard layout");
        out.par_chunks_mut(d).enumerate().for_each(|(r, row_out)| {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let src_row = &src[c * d..(c + 1) * d];
                for (o, s) in row_out.iter_mut().zip(src_row) {
                    *o += v * s;
                }
            }
        });
        Ok(Array2::from_shape_vec((self.n_rows, d), out).expect("shape"))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[[r, c]] = v;
            }
        }
        out
    }
}
