//! Compressed sparse row matrices over a dense row-major right-hand side.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> Csr<T> {
    /// Builds from per-row `(column, value)` lists; columns are sorted, duplicates summed.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, T)>>) -> Result<Self> {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if c >= ncols {
                    return Err(Error::dim("csr column", format!("< {ncols}"), format!("{c} in row {r}")));
                }
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.row(r)
            .find(|&(j, _)| j == c)
            .map_or(T::zero(), |(_, v)| v)
    }

    pub fn row_sum(&self, r: usize) -> T {
        self.row(r).fold(T::zero(), |acc, (_, v)| acc + v)
    }

    /// `self · x` where `x` is `ncols × width`, row-major.
    pub fn mul_dense(&self, x: &[T], width: usize) -> Vec<T> {
        debug_assert_eq!(x.len(), self.ncols * width);
        let mut out = vec![T::zero(); self.nrows * width];
        for r in 0..self.nrows {
            let dst = &mut out[r * width..(r + 1) * width];
            for (c, v) in self.row(r) {
                let src = &x[c * width..(c + 1) * width];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    }

    /// `selfᵀ · g` where `g` is `nrows × width`, row-major.
    pub fn tmul_dense(&self, g: &[T], width: usize) -> Vec<T> {
        debug_assert_eq!(g.len(), self.nrows * width);
        let mut out = vec![T::zero(); self.ncols * width];
        for r in 0..self.nrows {
            let src = &g[r * width..(r + 1) * width];
            for (c, v) in self.row(r) {
                let dst = &mut out[c * width..(c + 1) * width];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.nrows * self.ncols];
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                out[r * self.ncols + c] = v;
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Csr<U> {
        Csr {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|v| U::c(v.f64())).collect(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows).all(|r| self.row(r).all(|(c, v)| self.get(c, r) == v))
    }
}
