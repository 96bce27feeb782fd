//! Row-major f64 matrices and the three multiply kernels the MLP stack needs.
//!
//! The forward kernel `matmul` processes four output rows at a time with the
//! k-loop in the middle and the j-loop innermost, which LLVM auto-vectorizes
//! without any floating-point reassociation — results stay bit-exact while
//! running close to memory bandwidth on a single core. `matmul_at` computes
//! `a^T * b` directly (the weight-gradient shape) and skips zero activations,
//! which post-ReLU batches are full of.

use alloc::vec;
use alloc::vec::Vec;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Build from a flat row-major vector. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "flat data length must be rows*cols");
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Columns `[0, at)` and `[at, cols)` as two new matrices.
    pub fn split_cols(&self, at: usize) -> (Matrix, Matrix) {
        assert!(at <= self.cols);
        let mut left = Matrix::zeros(self.rows, at);
        let mut right = Matrix::zeros(self.rows, self.cols - at);
        for i in 0..self.rows {
            let src = self.row(i);
            left.row_mut(i).copy_from_slice(&src[..at]);
            right.row_mut(i).copy_from_slice(&src[at..]);
        }
        (left, right)
    }
}

/// Row-wise concatenation `[a | b]`; both must have the same row count.
pub fn hcat(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows, b.rows, "hcat row mismatch");
    let mut out = Matrix::zeros(a.rows, a.cols + b.cols);
    for i in 0..a.rows {
        let dst = out.row_mut(i);
        dst[..a.cols].copy_from_slice(a.row(i));
        dst[a.cols..].copy_from_slice(b.row(i));
    }
    out
}

/// `out = a * b` for `a: m x k`, `b: k x n`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows, b.cols);
    matmul_into(a, b, &mut out);
    out
}

/// `out = a * b`, writing into a preallocated matrix.
pub fn matmul_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    assert_eq!(a.cols, b.rows, "matmul inner dimensions must agree");
    assert_eq!(out.rows, a.rows, "matmul output rows");
    assert_eq!(out.cols, b.cols, "matmul output cols");
    let (m, kk, n) = (a.rows, a.cols, b.cols);
    out.data.fill(0.0);
    if n == 0 || kk == 0 {
        return;
    }

    let mut i = 0;
    // Four output rows per pass share each streamed row of `b`.
    while i + 4 <= m {
        let block = &mut out.data[i * n..(i + 4) * n];
        let (c0, rest) = block.split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        let a0 = &a.data[i * kk..(i + 1) * kk];
        let a1 = &a.data[(i + 1) * kk..(i + 2) * kk];
        let a2 = &a.data[(i + 2) * kk..(i + 3) * kk];
        let a3 = &a.data[(i + 3) * kk..(i + 4) * kk];
        for k in 0..kk {
            let (s0, s1, s2, s3) = (a0[k], a1[k], a2[k], a3[k]);
            let brow = &b.data[k * n..(k + 1) * n];
            for j in 0..n {
                let bj = brow[j];
                c0[j] += s0 * bj;
                c1[j] += s1 * bj;
                c2[j] += s2 * bj;
                c3[j] += s3 * bj;
            }
        }
        i += 4;
    }
    // Remainder rows one at a time.
    while i < m {
        let crow = &mut out.data[i * n..(i + 1) * n];
        let arow = &a.data[i * kk..(i + 1) * kk];
        for k in 0..kk {
            let s = arow[k];
            let brow = &b.data[k * n..(k + 1) * n];
            for j in 0..n {
                crow[j] += s * brow[j];
            }
        }
        i += 1;
    }
}

/// `out = a^T * b` for `a: m x k`, `b: m x n` (so `out: k x n`).
///
/// This is the weight-gradient shape `X^T * dY`; it accumulates one outer
/// product per batch row and skips rows of zero activation, so it is cheap on
/// sparse post-ReLU inputs.
pub fn matmul_at_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    assert_eq!(a.rows, b.rows, "matmul_at batch dimensions must agree");
    assert_eq!(out.rows, a.cols, "matmul_at output rows");
    assert_eq!(out.cols, b.cols, "matmul_at output cols");
    let (m, kk, n) = (a.rows, a.cols, b.cols);
    out.data.fill(0.0);
    if n == 0 {
        return;
    }
    for r in 0..m {
        let arow = &a.data[r * kk..(r + 1) * kk];
        let brow = &b.data[r * n..(r + 1) * n];
        for k in 0..kk {
            let s = arow[k];
            if s == 0.0 {
                continue;
            }
            let orow = &mut out.data[k * n..(k + 1) * n];
            for j in 0..n {
                orow[j] += s * brow[j];
            }
        }
    }
}
