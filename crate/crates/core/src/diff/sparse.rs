use crate::diff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Compressed sparse row matrix used as a constant left operand.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr<S> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> Csr<S> {
    /// Builds from per-row `(column, value)` lists; columns within a row must
    /// be strictly increasing.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, S)>>) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in &rows {
            let mut last = None;
            for &(c, v) in row {
                if c >= cols || last.is_some_and(|l| c <= l) {
                    return Err(Error::InvalidArgument(format!("bad sparse column {c}")));
                }
                last = Some(c);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, S)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor<S> {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                t.row_mut(r)[c] = v;
            }
        }
        t
    }

    pub fn matmul(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.rows() != self.cols {
            return Err(Error::shape("sparse_matmul", &[self.rows, self.cols], x.shape()));
        }
        let n = x.cols();
        let mut out = Tensor::zeros(self.rows, n);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                for (o, &xv) in out.row_mut(r).iter_mut().zip(x.row(c)) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    /// `out += selfᵀ · g` where `g` is `rows × n`.
    pub(crate) fn transpose_matmul_into(&self, g: &[S], n: usize, out: &mut [S]) {
        for r in 0..self.rows {
            let grow = &g[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                for (o, &gv) in out[c * n..(c + 1) * n].iter_mut().zip(grow) {
                    *o += v * gv;
                }
            }
        }
    }
}
