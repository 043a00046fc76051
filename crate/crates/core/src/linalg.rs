//! Dense row-major matrices and the handful of kernels the towers need.
//!
//! Every kernel works one row at a time with a fixed accumulation order, so
//! a row's result never depends on how many other rows are processed with
//! it.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point scalar usable for model parameters.
///
/// Production models use `f32`; `f64` models exist so gradients can be
/// checked against finite differences at tight tolerances.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite float conversion")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("float to f64")
    }

    fn as_f32(self) -> f32 {
        ToPrimitive::to_f32(&self).expect("float to f32")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        // chunks_exact on an empty-width matrix would panic
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Dot product accumulated in `f64`.
pub fn dot_f64<T: Real>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0, |acc, (&x, &y)| acc + x.as_f64() * y.as_f64())
}

/// `out = w · x` for `w` of shape `[out × in]`.
pub fn matvec<T: Real>(w: &Matrix<T>, x: &[T], out: &mut [T]) {
    debug_assert_eq!(w.cols(), x.len());
    debug_assert_eq!(w.rows(), out.len());
    for (o, row) in out.iter_mut().zip(w.iter_rows()) {
        *o = dot(row, x);
    }
}

/// `out += wᵀ · d` for `w` of shape `[out × in]`.
pub fn matvec_transpose_acc<T: Real>(w: &Matrix<T>, d: &[T], out: &mut [T]) {
    debug_assert_eq!(w.rows(), d.len());
    debug_assert_eq!(w.cols(), out.len());
    for (&di, row) in d.iter().zip(w.iter_rows()) {
        if di == T::zero() {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += di * wij;
        }
    }
}

/// `g += d ⊗ x` where `g` has shape `[d.len() × x.len()]`.
pub fn outer_acc<T: Real>(g: &mut Matrix<T>, d: &[T], x: &[T]) {
    debug_assert_eq!(g.rows(), d.len());
    debug_assert_eq!(g.cols(), x.len());
    for (i, &di) in d.iter().enumerate() {
        if di == T::zero() {
            continue;
        }
        for (gij, &xj) in g.row_mut(i).iter_mut().zip(x) {
            *gij += di * xj;
        }
    }
}

/// `y += alpha · x`
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree_with_loops() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]).unwrap();
        let mut out = [0.0; 2];
        matvec(&w, &[1.0, 1.0, 2.0], &mut out);
        assert_eq!(out, [9.0, -0.5]);

        let mut back = [0.0; 3];
        matvec_transpose_acc(&w, &[1.0, 2.0], &mut back);
        assert_eq!(back, [-1.0, 3.0, 3.0]);
    }

    #[test]
    fn outer_product_accumulates() {
        let mut g = Matrix::<f64>::zeros(2, 2);
        outer_acc(&mut g, &[1.0, 2.0], &[3.0, 4.0]);
        outer_acc(&mut g, &[1.0, 0.0], &[1.0, 1.0]);
        assert_eq!(g.as_slice(), &[4.0, 5.0, 6.0, 8.0]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(matches!(
            Matrix::<f32>::from_vec(2, 2, vec![0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
