//! Small dense square matrices over any [`Real`] scalar.

use std::ops::{Index, IndexMut};

use crate::real::Real;

use super::TensorError;

/// Pivots smaller than this in absolute value make a matrix singular.
pub const PIVOT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: Real> SquareMatrix<S> {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![S::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        SquareMatrix { n, data }
    }

    pub fn from_rows(rows: &[&[S]]) -> Self {
        let n = rows.len();
        Self::from_fn(n, |i, j| rows[i][j])
    }

    /// Row-major data of length n².
    pub fn from_vec(n: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), n * n, "matrix data length");
        SquareMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, o: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a.is_exact_zero() {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] = out[(i, j)] + a * o[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[S]) -> Vec<S> {
        (0..self.n)
            .map(|i| {
                (0..self.n).fold(S::zero(), |acc, j| acc + self[(i, j)] * v[j])
            })
            .collect()
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::from_fn(self.n, |i, j| self[(i, j)] + o[(i, j)])
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::from_fn(self.n, |i, j| self[(i, j)] - o[(i, j)])
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::from_fn(self.n, |i, j| self[(i, j)].scale(c))
    }

    pub fn frobenius_sq(&self) -> S {
        crate::real::sum_sq(&self.data)
    }

    pub fn map<T: Real>(&self, f: impl Fn(S) -> T) -> SquareMatrix<T> {
        SquareMatrix {
            n: self.n,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn to_f64(&self) -> SquareMatrix<f64> {
        self.map(|x| x.value())
    }

    /// Inverse and determinant by Gauss–Jordan elimination with partial
    /// pivoting. Pivot choice uses primal values only.
    pub fn inverse_and_det(&self) -> Result<(Self, S), TensorError> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let mut det = S::one();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&r, &s| {
                    a[(r, col)]
                        .value()
                        .abs()
                        .total_cmp(&a[(s, col)].value().abs())
                })
                .unwrap_or(col);
            let p = a[(piv, col)];
            if !(p.value().abs() >= PIVOT_EPS) {
                return Err(TensorError::SingularMatrix {
                    pivot: p.value().abs(),
                });
            }
            if piv != col {
                a.swap_rows(piv, col);
                inv.swap_rows(piv, col);
                det = -det;
            }
            det = det * p;
            let rp = S::one() / p;
            for j in 0..n {
                a[(col, j)] = a[(col, j)] * rp;
                inv[(col, j)] = inv[(col, j)] * rp;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[(r, col)];
                if f.is_exact_zero() {
                    continue;
                }
                for j in 0..n {
                    a[(r, j)] = a[(r, j)] - f * a[(col, j)];
                    inv[(r, j)] = inv[(r, j)] - f * inv[(col, j)];
                }
            }
        }
        Ok((inv, det))
    }

    pub fn inverse(&self) -> Result<Self, TensorError> {
        self.inverse_and_det().map(|(i, _)| i)
    }

    pub fn det(&self) -> Result<S, TensorError> {
        match self.inverse_and_det() {
            Ok((_, d)) => Ok(d),
            Err(TensorError::SingularMatrix { .. }) => Ok(S::zero()),
            Err(e) => Err(e),
        }
    }

    fn swap_rows(&mut self, r: usize, s: usize) {
        for j in 0..self.n {
            self.data.swap(r * self.n + j, s * self.n + j);
        }
    }
}

impl<S> Index<(usize, usize)> for SquareMatrix<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.n + j]
    }
}

impl<S> IndexMut<(usize, usize)> for SquareMatrix<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.n + j]
    }
}
