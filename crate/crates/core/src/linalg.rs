//! Dense row-major matrices.
//!
//! Storage is 32-bit, every reduction accumulates in 64-bit and rounds on
//! store. Row loops go through [`crate::par`], so results do not depend on
//! thread count.

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Copies the given rows into a new matrix, in the order given.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    /// Vertically stacks `mats`; all must share a column count.
    pub fn vstack(mats: &[&Matrix]) -> Result<Matrix> {
        let cols = mats.first().map_or(0, |m| m.cols);
        let rows = mats.iter().map(|m| m.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in mats {
            if m.cols != cols {
                return Err(Error::Dimension("vstack column mismatch".into()));
            }
            data.extend_from_slice(&m.data);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `dot(a, b)` with 64-bit accumulation, left-to-right.
#[inline]
pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += *x as f64 * *y as f64;
    }
    acc
}

/// `x (n x in) * w^T (in x out) + b`, accumulated in 64-bit per entry.
pub fn affine_xt(x: &Matrix, w: &Matrix, b: &[f32]) -> Result<Matrix> {
    if x.cols() != w.cols() {
        return Err(Error::Dimension(format!(
            "affine: input width {} vs weight fan-in {}",
            x.cols(),
            w.cols()
        )));
    }
    if b.len() != w.rows() {
        return Err(Error::Dimension("affine: bias length vs fan-out".into()));
    }
    let mut out = Matrix::zeros(x.rows(), w.rows());
    let cols = out.cols();
    par::for_each_row_mut(out.as_mut_slice(), cols, |n, row| {
        let xn = x.row(n);
        for (o, slot) in row.iter_mut().enumerate() {
            *slot = (dot_f64(xn, w.row(o)) + b[o] as f64) as f32;
        }
    });
    Ok(out)
}

/// `dz^T (out x n) * a (n x in)`: the weight gradient of an affine layer.
pub fn grad_weights(dz: &Matrix, a: &Matrix) -> Matrix {
    debug_assert_eq!(dz.rows(), a.rows());
    let mut out = Matrix::zeros(dz.cols(), a.cols());
    let in_dim = a.cols();
    par::for_each_row_mut(out.as_mut_slice(), in_dim, |o, row| {
        let mut acc = vec![0.0f64; in_dim];
        for n in 0..dz.rows() {
            let c = dz.get(n, o) as f64;
            for (slot, v) in acc.iter_mut().zip(a.row(n)) {
                *slot += c * *v as f64;
            }
        }
        for (slot, v) in row.iter_mut().zip(&acc) {
            *slot = *v as f32;
        }
    });
    out
}

/// Column sums of `dz`: the bias gradient.
pub fn grad_bias(dz: &Matrix) -> Vec<f32> {
    let mut acc = vec![0.0f64; dz.cols()];
    for n in 0..dz.rows() {
        for (slot, v) in acc.iter_mut().zip(dz.row(n)) {
            *slot += *v as f64;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// `dz (n x out) * w (out x in)`: gradient w.r.t. the layer input.
pub fn grad_input(dz: &Matrix, w: &Matrix) -> Matrix {
    debug_assert_eq!(dz.cols(), w.rows());
    let mut out = Matrix::zeros(dz.rows(), w.cols());
    let in_dim = w.cols();
    par::for_each_row_mut(out.as_mut_slice(), in_dim, |n, row| {
        let mut acc = vec![0.0f64; in_dim];
        for o in 0..w.rows() {
            let c = dz.get(n, o) as f64;
            for (slot, v) in acc.iter_mut().zip(w.row(o)) {
                *slot += c * *v as f64;
            }
        }
        for (slot, v) in row.iter_mut().zip(&acc) {
            *slot = *v as f32;
        }
    });
    out
}

/// Per-column mean of the given rows, in 64-bit.
pub fn mean_rows_f64(m: &Matrix, rows: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0f64; m.cols()];
    for &r in rows {
        for (slot, v) in acc.iter_mut().zip(m.row(r)) {
            *slot += *v as f64;
        }
    }
    let inv = 1.0 / rows.len() as f64;
    for slot in &mut acc {
        *slot *= inv;
    }
    acc
}
