//! Small dense linear algebra: a row-major matrix and a jittered Cholesky
//! factorisation. Everything downstream solves through the factor; the only
//! explicit inverse is the one needed for trace terms of likelihood gradients.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jitter ladder tried, in order, when factorising a covariance matrix.
pub const JITTER_LADDER: [f64; 3] = [1e-6, 1e-4, 1e-2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, found: data.len() });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += value;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a -= b);
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn transpose_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "transpose_matmul shape mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ · v`.
    pub fn transpose_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "transpose_matvec shape mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor `L` with `A + jitter·I = L Lᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cholesky {
    l: Matrix,
    jitter: f64,
}

impl Cholesky {
    /// Plain factorisation, no jitter. Returns `None` if a pivot is not
    /// strictly positive.
    pub fn factor(a: &Matrix) -> Option<Self> {
        Self::factor_shifted(a, 0.0)
    }

    fn factor_shifted(a: &Matrix, jitter: f64) -> Option<Self> {
        assert!(a.is_square(), "cholesky of a non-square matrix");
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)] + jitter;
            {
                let lj = &l.data[j * n..j * n + j];
                diag -= dot(lj, lj);
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return None;
            }
            let ljj = libm::sqrt(diag);
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let s = {
                    let li = &l.data[i * n..i * n + j];
                    let lj = &l.data[j * n..j * n + j];
                    a[(i, j)] - dot(li, lj)
                };
                l[(i, j)] = s / ljj;
            }
        }
        Some(Cholesky { l, jitter })
    }

    /// Factorises `a` with the smallest jitter on [`JITTER_LADDER`] that
    /// succeeds.
    pub fn factor_jittered(a: &Matrix) -> Result<Self> {
        for &jitter in JITTER_LADDER.iter() {
            if let Some(c) = Self::factor_shifted(a, jitter) {
                return Ok(c);
            }
        }
        Err(Error::NotPositiveDefinite { jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn factor_matrix(&self) -> &Matrix {
        &self.l
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        // leading zeros of `b` stay zero in `x`
        let start = b.iter().position(|v| *v != 0.0).unwrap_or(n);
        for i in start..n {
            let row = self.l.row(i);
            let s = dot(&row[start..i], &x[start..i]);
            x[i] = (x[i] - s) / row[i];
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let xi = x[i] / self.l[(i, i)];
            x[i] = xi;
            let row = self.l.row(i);
            for k in 0..i {
                x[k] -= row[k] * xi;
            }
        }
        x
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Solves `L X = B` column by column.
    pub fn solve_lower_matrix(&self, b: &Matrix) -> Matrix {
        let n = self.dim();
        assert_eq!(b.rows(), n);
        let mut x = b.clone();
        let cols = b.cols();
        for i in 0..n {
            let lii = self.l[(i, i)];
            for k in 0..i {
                let lik = self.l[(i, k)];
                if lik == 0.0 {
                    continue;
                }
                let (head, tail) = x.data.split_at_mut(i * cols);
                let xk = &head[k * cols..(k + 1) * cols];
                for (xi, v) in tail[..cols].iter_mut().zip(xk) {
                    *xi -= lik * v;
                }
            }
            x.row_mut(i).iter_mut().for_each(|v| *v /= lii);
        }
        x
    }

    /// Solves `Lᵀ X = B` column by column.
    pub fn solve_upper_matrix(&self, b: &Matrix) -> Matrix {
        let n = self.dim();
        assert_eq!(b.rows(), n);
        let mut x = b.clone();
        let cols = b.cols();
        for i in (0..n).rev() {
            let lii = self.l[(i, i)];
            x.row_mut(i).iter_mut().for_each(|v| *v /= lii);
            for k in 0..i {
                let lik = self.l[(i, k)];
                if lik == 0.0 {
                    continue;
                }
                let (head, tail) = x.data.split_at_mut(i * cols);
                let xi = &tail[..cols];
                for (xk, v) in head[k * cols..(k + 1) * cols].iter_mut().zip(xi) {
                    *xk -= lik * v;
                }
            }
        }
        x
    }

    /// `log det (L Lᵀ)`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| libm::log(*d)).sum::<f64>()
    }

    /// Explicit `(L Lᵀ)⁻¹`, used only for trace terms of gradients.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let linv = self.solve_lower_matrix(&Matrix::identity(n));
        let mut inv = linv.transpose_matmul(&linv);
        // symmetrise away rounding
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spd() -> Matrix {
        Matrix::from_row_major(3, 3, vec![4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0]).unwrap()
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = spd();
        let c = Cholesky::factor(&a).unwrap();
        let l = c.factor_matrix();
        let back = l.matmul(&l.transpose());
        assert!(back.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn solves_and_inverse_agree() {
        let a = spd();
        let c = Cholesky::factor(&a).unwrap();
        let b = [1.0, -2.0, 0.5];
        let x = c.solve(&b);
        let ax = a.matvec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12);
        }
        let inv = c.inverse();
        assert!(a.matmul(&inv).max_abs_diff(&Matrix::identity(3)) < 1e-12);
        let bm = Matrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        let lower = c.solve_lower_matrix(&bm);
        assert!(c.factor_matrix().matmul(&lower).max_abs_diff(&bm) < 1e-12);
        let upper = c.solve_upper_matrix(&bm);
        assert!(c.factor_matrix().transpose().matmul(&upper).max_abs_diff(&bm) < 1e-12);
    }

    #[test]
    fn log_det_matches_product_of_pivots() {
        let c = Cholesky::factor(&Matrix::identity(4)).unwrap();
        assert_abs_diff_eq!(c.log_det(), 0.0);
        let d = Matrix::from_fn(2, 2, |i, j| if i == j { 2.0 } else { 0.0 });
        assert_abs_diff_eq!(Cholesky::factor(&d).unwrap().log_det(), 4f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn jitter_ladder_rescues_semidefinite() {
        let ones = Matrix::from_fn(3, 3, |_, _| 1.0);
        assert!(Cholesky::factor(&ones).is_none());
        let c = Cholesky::factor_jittered(&ones).unwrap();
        assert_eq!(c.jitter(), 1e-6);
        let bad = Matrix::from_fn(2, 2, |i, j| if i == j { -1.0 } else { 0.0 });
        assert!(matches!(Cholesky::factor_jittered(&bad), Err(Error::NotPositiveDefinite { .. })));
    }
}
