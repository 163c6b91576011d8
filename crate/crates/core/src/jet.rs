//! Second-order forward jets in `n` coordinate directions.
//!
//! A [`Jet2`] carries a value, its gradient and its Hessian with respect to
//! the seeded coordinates. The Hessian is stored once as a packed upper
//! triangle and mirrored on read, so symmetry holds exactly.
//!
//! Jets are generic over [`Real`], so jet arithmetic on taped scalars gives
//! reverse-over-forward derivatives for free.

use thiserror::Error;

use crate::real::{self, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error("domain error: {op} of {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("arity mismatch: {op} takes {expected} argument(s), got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
}

/// Index of the pair (k, l) in a packed upper-triangular n×n array.
#[inline]
pub fn tri_index(n: usize, k: usize, l: usize) -> usize {
    let (k, l) = if k <= l { (k, l) } else { (l, k) };
    k * n - k * (k + 1) / 2 + l
}

#[inline]
pub fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jet2<S> {
    value: S,
    d1: Vec<S>,
    d2: Vec<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Ln,
    Sqrt,
    Sigmoid,
    Silu,
}

impl ElemOp {
    fn name(self) -> &'static str {
        match self {
            ElemOp::Add => "add",
            ElemOp::Sub => "sub",
            ElemOp::Mul => "mul",
            ElemOp::Div => "div",
            ElemOp::Exp => "exp",
            ElemOp::Ln => "ln",
            ElemOp::Sqrt => "sqrt",
            ElemOp::Sigmoid => "sigmoid",
            ElemOp::Silu => "silu",
        }
    }

    fn arity(self) -> usize {
        match self {
            ElemOp::Add | ElemOp::Sub | ElemOp::Mul | ElemOp::Div => 2,
            _ => 1,
        }
    }
}

/// Apply one elementary operation to jet arguments.
pub fn jet2_apply<S: Real>(op: ElemOp, args: &[Jet2<S>]) -> Result<Jet2<S>, JetError> {
    if args.len() != op.arity() {
        return Err(JetError::Arity {
            op: op.name(),
            expected: op.arity(),
            got: args.len(),
        });
    }
    let a = &args[0];
    match op {
        ElemOp::Add => a.try_zip(&args[1]).map(|_| a.add(&args[1])),
        ElemOp::Sub => a.try_zip(&args[1]).map(|_| a.sub(&args[1])),
        ElemOp::Mul => a.try_zip(&args[1]).map(|_| a.mul(&args[1])),
        ElemOp::Div => {
            a.try_zip(&args[1])?;
            a.div(&args[1])
        }
        ElemOp::Exp => Ok(a.exp()),
        ElemOp::Ln => a.ln(),
        ElemOp::Sqrt => a.sqrt(),
        ElemOp::Sigmoid => Ok(a.sigmoid()),
        ElemOp::Silu => Ok(a.silu()),
    }
}

impl<S: Real> Jet2<S> {
    pub fn constant(n: usize, value: S) -> Self {
        Jet2 {
            value,
            d1: vec![S::zero(); n],
            d2: vec![S::zero(); tri_len(n)],
        }
    }

    /// The coordinate z_k itself: gradient e_k, zero Hessian.
    pub fn seed(n: usize, k: usize, value: S) -> Self {
        let mut j = Self::constant(n, value);
        j.d1[k] = S::one();
        j
    }

    /// All n coordinates of the point `z` as seeded jets.
    pub fn seed_all(z: &[S]) -> Vec<Self> {
        let n = z.len();
        z.iter()
            .enumerate()
            .map(|(k, &v)| Self::seed(n, k, v))
            .collect()
    }

    pub fn from_parts(value: S, d1: Vec<S>, d2_full: impl Fn(usize, usize) -> S) -> Self {
        let n = d1.len();
        let mut d2 = Vec::with_capacity(tri_len(n));
        for k in 0..n {
            for l in k..n {
                d2.push(d2_full(k, l));
            }
        }
        Jet2 { value, d1, d2 }
    }

    /// Build from a gradient and a packed upper-triangular Hessian.
    pub fn from_packed(value: S, d1: Vec<S>, d2: Vec<S>) -> Self {
        assert_eq!(d2.len(), tri_len(d1.len()), "packed Hessian length");
        Jet2 { value, d1, d2 }
    }

    /// Packed upper-triangular Hessian, ordered as in [`tri_index`].
    pub fn hessian_packed(&self) -> &[S] {
        &self.d2
    }

    /// Full n×n Hessian, row major.
    pub fn hessian_full(&self) -> Vec<S> {
        let n = self.dim();
        let mut h = Vec::with_capacity(n * n);
        for k in 0..n {
            for l in 0..n {
                h.push(self.d2(k, l));
            }
        }
        h
    }

    pub fn dim(&self) -> usize {
        self.d1.len()
    }

    pub fn value(&self) -> S {
        self.value
    }

    pub fn d1(&self, k: usize) -> S {
        self.d1[k]
    }

    pub fn grad(&self) -> &[S] {
        &self.d1
    }

    pub fn d2(&self, k: usize, l: usize) -> S {
        self.d2[tri_index(self.dim(), k, l)]
    }

    fn try_zip(&self, o: &Self) -> Result<(), JetError> {
        if self.dim() == o.dim() {
            Ok(())
        } else {
            Err(JetError::Dimension(self.dim(), o.dim()))
        }
    }

    /// Compose with a scalar function given its value and first two
    /// derivatives at `self.value`.
    pub fn chain(&self, f0: S, f1: S, f2: S) -> Self {
        let n = self.dim();
        let d1: Vec<S> = self.d1.iter().map(|&d| f1 * d).collect();
        let mut d2 = Vec::with_capacity(self.d2.len());
        for k in 0..n {
            for l in k..n {
                let idx = d2.len();
                d2.push(f1 * self.d2[idx] + f2 * self.d1[k] * self.d1[l]);
            }
        }
        Jet2 { value: f0, d1, d2 }
    }

    pub fn add(&self, o: &Self) -> Self {
        Jet2 {
            value: self.value + o.value,
            d1: self.d1.iter().zip(&o.d1).map(|(&a, &b)| a + b).collect(),
            d2: self.d2.iter().zip(&o.d2).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Jet2 {
            value: self.value - o.value,
            d1: self.d1.iter().zip(&o.d1).map(|(&a, &b)| a - b).collect(),
            d2: self.d2.iter().zip(&o.d2).map(|(&a, &b)| a - b).collect(),
        }
    }

    pub fn neg(&self) -> Self {
        Jet2 {
            value: -self.value,
            d1: self.d1.iter().map(|&a| -a).collect(),
            d2: self.d2.iter().map(|&a| -a).collect(),
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let n = self.dim();
        let (u, v) = (self.value, o.value);
        let d1 = (0..n).map(|k| self.d1[k] * v + u * o.d1[k]).collect();
        let mut d2 = Vec::with_capacity(self.d2.len());
        for k in 0..n {
            for l in k..n {
                let idx = d2.len();
                d2.push(
                    self.d2[idx] * v
                        + self.d1[k] * o.d1[l]
                        + self.d1[l] * o.d1[k]
                        + u * o.d2[idx],
                );
            }
        }
        Jet2 {
            value: u * v,
            d1,
            d2,
        }
    }

    pub fn add_scalar(&self, c: S) -> Self {
        let mut j = self.clone();
        j.value = j.value + c;
        j
    }

    pub fn mul_scalar(&self, c: S) -> Self {
        Jet2 {
            value: self.value * c,
            d1: self.d1.iter().map(|&a| a * c).collect(),
            d2: self.d2.iter().map(|&a| a * c).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.mul_scalar(S::cst(c))
    }

    pub fn recip(&self) -> Result<Self, JetError> {
        let x = self.value;
        if x.value() == 0.0 {
            return Err(JetError::DivisionByZero);
        }
        let r = S::one() / x;
        Ok(self.chain(r, -(r * r), (r * r * r).scale(2.0)))
    }

    pub fn div(&self, o: &Self) -> Result<Self, JetError> {
        Ok(self.mul(&o.recip()?))
    }

    pub fn exp(&self) -> Self {
        let e = self.value.exp();
        self.chain(e, e, e)
    }

    pub fn ln(&self) -> Result<Self, JetError> {
        let x = self.value;
        if !(x.value() > 0.0) {
            return Err(JetError::Domain {
                op: "ln",
                value: x.value(),
            });
        }
        let r = S::one() / x;
        Ok(self.chain(x.ln(), r, -(r * r)))
    }

    pub fn sqrt(&self) -> Result<Self, JetError> {
        let x = self.value;
        if !(x.value() > 0.0) {
            return Err(JetError::Domain {
                op: "sqrt",
                value: x.value(),
            });
        }
        let s = x.sqrt();
        let d1 = (S::one() / s).scale(0.5);
        let d2 = -(d1 / x).scale(0.5);
        Ok(self.chain(s, d1, d2))
    }

    pub fn sigmoid(&self) -> Self {
        let x = self.value;
        let s = x.sigmoid();
        let q = s * (S::one() - s);
        self.chain(s, q, q * (S::one() - s.scale(2.0)))
    }

    pub fn silu(&self) -> Self {
        let x = self.value;
        let s = x.sigmoid();
        let q = s * (S::one() - s);
        let u = S::one() - s.scale(2.0);
        self.chain(x * s, s + x * q, q * (S::cst(2.0) + x * u))
    }

    /// Compose an outer function F: R^m → R with inner jets `inner`, given
    /// F's value, gradient and Hessian (m×m, row major) at the inner values.
    pub fn compose(value: S, grad: &[S], hess: &[S], inner: &[Jet2<S>]) -> Self {
        let m = inner.len();
        let n = inner[0].dim();
        let d1 = (0..n)
            .map(|k| real::sum((0..m).map(|a| grad[a] * inner[a].d1[k])))
            .collect();
        let mut d2 = Vec::with_capacity(tri_len(n));
        for k in 0..n {
            for l in k..n {
                let idx = d2.len();
                let mut acc = S::zero();
                for a in 0..m {
                    acc = acc + grad[a] * inner[a].d2[idx];
                    for b in 0..m {
                        acc = acc + hess[a * m + b] * inner[a].d1[k] * inner[b].d1[l];
                    }
                }
                d2.push(acc);
            }
        }
        Jet2 { value, d1, d2 }
    }

    pub fn map_scalar<T: Real>(&self, f: impl Fn(S) -> T) -> Jet2<T> {
        Jet2 {
            value: f(self.value),
            d1: self.d1.iter().map(|&x| f(x)).collect(),
            d2: self.d2.iter().map(|&x| f(x)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn packed_index_covers_triangle() {
        let n = 4;
        let mut seen = vec![false; tri_len(n)];
        for k in 0..n {
            for l in 0..n {
                seen[tri_index(n, k, l)] = true;
                assert_eq!(tri_index(n, k, l), tri_index(n, l, k));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn silu_of_constant_zero() {
        let j = Jet2::<f64>::constant(2, 0.0).silu();
        assert_eq!(j.value(), 0.0);
        assert_eq!(j.d1(0), 0.0);
        let s = Jet2::<f64>::seed(1, 0, 0.0).silu();
        assert_eq!(s.d1(0), 0.5);
        assert!(close(s.d2(0, 0), 0.5, 1e-15));
    }

    #[test]
    fn silu_of_seeded_one() {
        let j = Jet2::<f64>::seed(1, 0, 1.0).silu();
        assert!(close(j.value(), 0.731_058_578_630_004_9, 1e-15));
        let d = real::silu_derivs(1.0);
        assert!(close(j.d1(0), d[1], 1e-15));
        assert!(close(j.d2(0, 0), d[2], 1e-14));
    }

    #[test]
    fn exp_of_ln_is_identity() {
        let z = Jet2::seed_all(&[0.7, 1.9, 2.3]);
        let u = z[0].mul(&z[1]).add(&z[2].mul(&z[2]));
        let back = u.ln().unwrap().exp();
        assert!(close(back.value(), u.value(), 1e-14));
        for k in 0..3 {
            assert!(close(back.d1(k), u.d1(k), 1e-14));
            for l in 0..3 {
                assert!(close(back.d2(k, l), u.d2(k, l), 1e-14));
            }
        }
    }

    #[test]
    fn product_of_coordinates() {
        let z = Jet2::seed_all(&[2.0, 3.0]);
        let p = z[0].mul(&z[1]);
        assert_eq!(p.value(), 6.0);
        assert_eq!((p.d1(0), p.d1(1)), (3.0, 2.0));
        assert_eq!((p.d2(0, 0), p.d2(0, 1), p.d2(1, 1)), (0.0, 1.0, 0.0));
    }

    #[test]
    fn domain_errors() {
        let z = Jet2::<f64>::seed(1, 0, -1.0);
        assert!(matches!(z.ln(), Err(JetError::Domain { op: "ln", .. })));
        assert!(matches!(z.sqrt(), Err(JetError::Domain { op: "sqrt", .. })));
        let zero = Jet2::<f64>::constant(1, 0.0);
        assert_eq!(z.div(&zero), Err(JetError::DivisionByZero));
        assert!(jet2_apply(ElemOp::Add, &[z.clone()]).is_err());
    }

    #[test]
    fn apply_matches_methods() {
        let z = Jet2::seed_all(&[0.4, 1.2]);
        let q = jet2_apply(ElemOp::Div, &[z[0].clone(), z[1].clone()]).unwrap();
        let direct = z[0].div(&z[1]).unwrap();
        assert_eq!(q, direct);
        // d²(x/y)/dy² = 2x/y³
        assert!(close(q.d2(1, 1), 2.0 * 0.4 / 1.2f64.powi(3), 1e-14));
    }

    #[test]
    fn compose_matches_direct_chain() {
        // F(a, b) = a·b composed with a = z0², b = exp(z1)
        let z = Jet2::seed_all(&[0.3, -0.5]);
        let a = z[0].mul(&z[0]);
        let b = z[1].exp();
        let direct = a.mul(&b);
        let (av, bv) = (a.value(), b.value());
        let composed = Jet2::compose(av * bv, &[bv, av], &[0.0, 1.0, 1.0, 0.0], &[a, b]);
        for k in 0..2 {
            assert!(close(composed.d1(k), direct.d1(k), 1e-14));
            for l in 0..2 {
                assert!(close(composed.d2(k, l), direct.d2(k, l), 1e-14));
            }
        }
    }
}
