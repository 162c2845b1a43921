//! Row-major dense matrix used for features, activations and logits.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(invalid(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out = a · w + bias`, where `w` is `in × out` row-major.
pub(crate) fn affine(a: &Matrix, w: &[f64], bias: &[f64]) -> Matrix {
    let (n, k) = (a.rows, a.cols);
    let m = bias.len();
    debug_assert_eq!(w.len(), k * m);
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let dst = &mut out.data[i * m..(i + 1) * m];
        dst.copy_from_slice(bias);
        let src = &a.data[i * k..(i + 1) * k];
        for (p, &x) in src.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let wrow = &w[p * m..(p + 1) * m];
            for (d, &wv) in dst.iter_mut().zip(wrow) {
                *d += x * wv;
            }
        }
    }
    out
}

/// `aᵀ · b` accumulated into `out` (`a: n×k`, `b: n×m`, `out: k×m`).
pub(crate) fn add_transpose_product(a: &Matrix, b: &Matrix, out: &mut [f64]) {
    let (n, k, m) = (a.rows, a.cols, b.cols);
    debug_assert_eq!(b.rows, n);
    debug_assert_eq!(out.len(), k * m);
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        let brow = &b.data[i * m..(i + 1) * m];
        for (p, &x) in arow.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let dst = &mut out[p * m..(p + 1) * m];
            for (d, &bv) in dst.iter_mut().zip(brow) {
                *d += x * bv;
            }
        }
    }
}

/// `g · wᵀ` (`g: n×m`, `w: k×m` row-major) giving `n×k`.
pub(crate) fn product_transpose(g: &Matrix, w: &[f64], k: usize) -> Matrix {
    let (n, m) = (g.rows, g.cols);
    debug_assert_eq!(w.len(), k * m);
    let mut out = Matrix::zeros(n, k);
    for i in 0..n {
        let grow = &g.data[i * m..(i + 1) * m];
        let dst = &mut out.data[i * k..(i + 1) * k];
        for (p, d) in dst.iter_mut().enumerate() {
            let wrow = &w[p * m..(p + 1) * m];
            *d = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
        }
    }
    out
}
