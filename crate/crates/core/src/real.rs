//! Scalar abstraction shared by plain `f64` evaluation and taped evaluation.
//!
//! Everything downstream of the network output (tensor pushes, residuals,
//! per-point loss terms) is written once against [`Real`] and instantiated
//! with `f64` for reporting and with [`Var`](crate::tape::Var) for gradients.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Lift a constant. Constants never carry derivative information.
    fn cst(x: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sigmoid(self) -> Self;
    fn silu(self) -> Self;
    /// True only for a zero that carries no derivative information.
    fn is_exact_zero(self) -> bool;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn one() -> Self {
        Self::cst(1.0)
    }

    fn scale(self, c: f64) -> Self {
        self * Self::cst(c)
    }

    fn square(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn cst(x: f64) -> Self {
        x
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    fn silu(self) -> Self {
        self * sigmoid(self)
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn is_exact_zero(self) -> bool {
        self == 0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// silu(x) = x·σ(x) and its first three derivatives at `x`.
#[inline]
pub fn silu_derivs(x: f64) -> [f64; 4] {
    let s = sigmoid(x);
    let q = s * (1.0 - s);
    let u = 1.0 - 2.0 * s;
    [
        x * s,
        s + x * q,
        q * (2.0 + x * u),
        q * (u * (3.0 + x * u) - 2.0 * x * q),
    ]
}

/// σ(x) and its first two derivatives.
#[inline]
pub fn sigmoid_derivs(x: f64) -> [f64; 3] {
    let s = sigmoid(x);
    let q = s * (1.0 - s);
    [s, q, q * (1.0 - 2.0 * s)]
}

pub fn sum<S: Real>(xs: impl IntoIterator<Item = S>) -> S {
    xs.into_iter().fold(S::zero(), |acc, x| acc + x)
}

pub fn sum_sq<S: Real>(xs: &[S]) -> S {
    xs.iter().fold(S::zero(), |acc, &x| acc + x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn silu_derivatives_match_finite_differences() {
        for &x in &[-4.0, -1.3, -0.2, 0.0, 0.7, 2.5, 6.0] {
            let d = silu_derivs(x);
            let h = 1e-5;
            let fd1 = central(|t| silu_derivs(t)[0], x, h);
            let fd2 = central(|t| silu_derivs(t)[1], x, h);
            let fd3 = central(|t| silu_derivs(t)[2], x, h);
            assert!((d[1] - fd1).abs() < 1e-9, "x={x}");
            assert!((d[2] - fd2).abs() < 1e-9, "x={x}");
            assert!((d[3] - fd3).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn silu_at_zero_and_one() {
        let d = silu_derivs(0.0);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 0.5);
        let v = 1.0f64.silu();
        assert!((v - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_for_large_arguments() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-16);
    }
}
