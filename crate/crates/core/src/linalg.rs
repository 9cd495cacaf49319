//! Minimal dense row-major matrix and the vector helpers the solvers need.
//!
//! Everything here is deliberately small: the OT solver and the training
//! loops need custom log-domain kernels, so a fixed-layout `Vec`-backed
//! matrix with explicit loops is all the structure we want.

use std::ops::{Index, IndexMut};

use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<R> {
    rows: usize,
    cols: usize,
    data: Vec<R>,
}

impl<R: Real> Mat<R> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![R::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: R) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    /// Builds from a flat row-major buffer. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<R>) -> Self {
        assert_eq!(data.len(), rows * cols, "flat buffer length must be rows*cols");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<R>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for row in rows {
            assert_eq!(row.len(), n_cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: rows.len(), cols: n_cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> R) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[R] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [R] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * other`, shapes `(m,k) x (k,n)`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimensions");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == R::zero() {
                    continue;
                }
                let orow = other.row(k);
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(orow) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`, shapes `(m,k) x (n,k)`.
    pub fn matmul_nt(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dimensions");
        Self::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    pub fn row_sums(&self) -> Vec<R> {
        (0..self.rows).map(|i| self.row(i).iter().copied().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<R> {
        let mut out = vec![R::zero(); self.cols];
        for i in 0..self.rows {
            for (o, &x) in out.iter_mut().zip(self.row(i)) {
                *o = *o + x;
            }
        }
        out
    }

    pub fn sum(&self) -> R {
        self.data.iter().copied().sum()
    }

    /// Largest absolute entry difference against `other`.
    pub fn max_abs_diff(&self, other: &Self) -> R {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(R::zero(), R::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<R: Real> Index<(usize, usize)> for Mat<R> {
    type Output = R;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &R {
        &self.data[i * self.cols + j]
    }
}

impl<R: Real> IndexMut<(usize, usize)> for Mat<R> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut R {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn l2_norm<R: Real>(a: &[R]) -> R {
    dot(a, a).sqrt()
}

/// Numerically stable `log(sum_i exp(x_i))`.
pub fn log_sum_exp<R: Real>(xs: &[R]) -> R {
    let m = xs.iter().copied().fold(R::neg_infinity(), R::max);
    if !m.is_finite() {
        return m;
    }
    let s: R = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn max_abs<R: Real>(xs: &[R]) -> R {
    xs.iter().map(|x| x.abs()).fold(R::zero(), R::max)
}

/// Logistic function.
pub fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}
