//! Tensor transformation rules.
//!
//! A coordinate change z ↦ z′ is described pointwise by a [`JacobianBundle`].
//! [`push_vector`] and [`push_metric`] move a (1,0) vector field or a (0,2)
//! metric, together with its first coordinate derivatives, into the new
//! coordinates. Derivative arrays always put the differentiation index last.

mod matrix;

pub use matrix::{SquareMatrix, PIVOT_EPS};

use thiserror::Error;

use crate::jet::Jet2;
use crate::real::Real;

/// Bundles with |det W| below this are treated as non-invertible.
pub const DET_GUARD: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("singular matrix (pivot {pivot:e})")]
    SingularMatrix { pivot: f64 },
    #[error("singular Jacobian: |det W| = {det:e} below {DET_GUARD:e}")]
    SingularJacobian { det: f64 },
    #[error("expected a {expected} field sample, got {got}")]
    WrongKind {
        expected: &'static str,
        got: &'static str,
    },
    #[error("bundle carries no second derivatives but the field sample has derivatives")]
    MissingSecondOrder,
    #[error("dimension mismatch: bundle {bundle}, field {field}")]
    Dimension { bundle: usize, field: usize },
}

pub fn mat_inverse<S: Real>(a: &SquareMatrix<S>) -> Result<SquareMatrix<S>, TensorError> {
    a.inverse()
}

pub fn det<S: Real>(a: &SquareMatrix<S>) -> Result<S, TensorError> {
    a.det()
}

/// Per-point transformation data: z′, W = dz′/dz, ∂W, W⁻¹ and det W.
///
/// `dw[k]` is ∂_k W taken in the original coordinates, so
/// `dw[k][(i, j)]` = ∂²z′^i / ∂z^k ∂z^j. It is absent for first-order bundles.
#[derive(Debug, Clone)]
pub struct JacobianBundle<S> {
    pub z: Vec<S>,
    pub w: SquareMatrix<S>,
    pub dw: Option<Vec<SquareMatrix<S>>>,
    pub w_inv: SquareMatrix<S>,
    pub det: S,
}

impl<S: Real> JacobianBundle<S> {
    pub fn new(
        z: Vec<S>,
        w: SquareMatrix<S>,
        dw: Option<Vec<SquareMatrix<S>>>,
    ) -> Result<Self, TensorError> {
        let (w_inv, det) = match w.inverse_and_det() {
            Ok(pair) => pair,
            Err(TensorError::SingularMatrix { .. }) => {
                return Err(TensorError::SingularJacobian { det: 0.0 })
            }
            Err(e) => return Err(e),
        };
        if !(det.value().abs() >= DET_GUARD) {
            return Err(TensorError::SingularJacobian { det: det.value() });
        }
        Ok(JacobianBundle {
            z,
            w,
            dw,
            w_inv,
            det,
        })
    }

    pub fn identity(z: Vec<S>) -> Self {
        let n = z.len();
        JacobianBundle {
            z,
            w: SquareMatrix::identity(n),
            dw: Some(vec![SquareMatrix::zeros(n); n]),
            w_inv: SquareMatrix::identity(n),
            det: S::one(),
        }
    }

    /// Bundle of the map whose components are the given jets.
    pub fn from_jets(out: &[Jet2<S>], second_order: bool) -> Result<Self, TensorError> {
        let n = out.len();
        let z = out.iter().map(|j| j.value()).collect();
        let w = SquareMatrix::from_fn(n, |i, j| out[i].d1(j));
        let dw = second_order.then(|| {
            (0..n)
                .map(|k| SquareMatrix::from_fn(n, |i, j| out[i].d2(k, j)))
                .collect()
        });
        Self::new(z, w, dw)
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// ∂_k (W⁻¹) = −W⁻¹ (∂_k W) W⁻¹, for every k.
    pub fn d_w_inv(&self) -> Option<Vec<SquareMatrix<S>>> {
        self.dw.as_ref().map(|dw| {
            dw.iter()
                .map(|dk| self.w_inv.matmul(dk).matmul(&self.w_inv).scale(-1.0))
                .collect()
        })
    }

    /// Bundle of the inverse map evaluated at z′, given the original base
    /// point `z`.
    pub fn inverse(&self, z: Vec<S>) -> Result<Self, TensorError> {
        let n = self.dim();
        let dw = self.d_w_inv().map(|dinv| {
            // ∂′_k (W⁻¹) = Σ_l ∂_l(W⁻¹) (W⁻¹)^l_k
            (0..n)
                .map(|k| {
                    SquareMatrix::from_fn(n, |i, j| {
                        crate::real::sum((0..n).map(|l| dinv[l][(i, j)] * self.w_inv[(l, k)]))
                    })
                })
                .collect()
        });
        JacobianBundle::new(z, self.w_inv.clone(), dw)
    }

    pub fn to_f64(&self) -> JacobianBundle<f64> {
        JacobianBundle {
            z: self.z.iter().map(|x| x.value()).collect(),
            w: self.w.to_f64(),
            dw: self.dw.as_ref().map(|v| v.iter().map(|m| m.to_f64()).collect()),
            w_inv: self.w_inv.to_f64(),
            det: self.det.value(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// (1,0) vector, e.g. a phase-space flow f.
    Vector,
    /// (0,2) symmetric metric g.
    Metric,
}

impl FieldKind {
    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Vector => "vector",
            FieldKind::Metric => "metric",
        }
    }
}

/// A tensor field value at one point with its coordinate derivatives.
///
/// Vector: `value[i]`, `deriv[i*n + k]` = ∂_k f^i.
/// Metric: `value[i*n + j]`, `deriv[(i*n + j)*n + k]` = ∂_k g_ij.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample<S> {
    pub kind: FieldKind,
    pub n: usize,
    pub value: Vec<S>,
    pub deriv: Option<Vec<S>>,
}

impl<S: Real> FieldSample<S> {
    pub fn vector(value: Vec<S>, deriv: Option<Vec<S>>) -> Self {
        let n = value.len();
        FieldSample {
            kind: FieldKind::Vector,
            n,
            value,
            deriv,
        }
    }

    pub fn metric(n: usize, value: Vec<S>, deriv: Option<Vec<S>>) -> Self {
        FieldSample {
            kind: FieldKind::Metric,
            n,
            value,
            deriv,
        }
    }

    /// Vector field sample from one jet per component.
    pub fn vector_from_jets(comps: &[Jet2<S>]) -> Self {
        let n = comps.len();
        let value = comps.iter().map(|j| j.value()).collect();
        let mut deriv = Vec::with_capacity(n * n);
        for c in comps {
            deriv.extend_from_slice(c.grad());
        }
        Self::vector(value, Some(deriv))
    }

    /// Metric sample from n×n row-major jets.
    pub fn metric_from_jets(n: usize, comps: &[Jet2<S>]) -> Self {
        let value = comps.iter().map(|j| j.value()).collect();
        let mut deriv = Vec::with_capacity(n * n * n);
        for c in comps {
            deriv.extend_from_slice(c.grad());
        }
        Self::metric(n, value, Some(deriv))
    }

    /// Jacobian ∂_k f^i of a vector sample as a matrix (row i, column k).
    pub fn jacobian(&self) -> Option<SquareMatrix<S>> {
        match (self.kind, &self.deriv) {
            (FieldKind::Vector, Some(d)) => Some(SquareMatrix::from_vec(self.n, d.clone())),
            _ => None,
        }
    }

    pub fn metric_matrix(&self) -> SquareMatrix<S> {
        SquareMatrix::from_vec(self.n, self.value.clone())
    }

    /// ∂_k g as a matrix.
    pub fn metric_deriv(&self, k: usize) -> Option<SquareMatrix<S>> {
        let n = self.n;
        self.deriv
            .as_ref()
            .map(|d| SquareMatrix::from_fn(n, |i, j| d[(i * n + j) * n + k]))
    }

    pub fn without_deriv(mut self) -> Self {
        self.deriv = None;
        self
    }

    pub fn to_f64(&self) -> FieldSample<f64> {
        FieldSample {
            kind: self.kind,
            n: self.n,
            value: self.value.iter().map(|x| x.value()).collect(),
            deriv: self
                .deriv
                .as_ref()
                .map(|d| d.iter().map(|x| x.value()).collect()),
        }
    }

    pub fn lift<T: Real>(&self) -> FieldSample<T> {
        FieldSample {
            kind: self.kind,
            n: self.n,
            value: self.value.iter().map(|x| T::cst(x.value())).collect(),
            deriv: self
                .deriv
                .as_ref()
                .map(|d| d.iter().map(|x| T::cst(x.value())).collect()),
        }
    }
}

fn check_dims<S: Real>(s: &FieldSample<S>, b: &JacobianBundle<S>) -> Result<(), TensorError> {
    if s.n != b.dim() {
        return Err(TensorError::Dimension {
            bundle: b.dim(),
            field: s.n,
        });
    }
    if s.deriv.is_some() && b.dw.is_none() {
        return Err(TensorError::MissingSecondOrder);
    }
    Ok(())
}

/// f′ = W f and J′ = (∂W f + W J) W⁻¹.
pub fn push_vector<S: Real>(
    s: &FieldSample<S>,
    b: &JacobianBundle<S>,
) -> Result<FieldSample<S>, TensorError> {
    if s.kind != FieldKind::Vector {
        return Err(TensorError::WrongKind {
            expected: "vector",
            got: s.kind.name(),
        });
    }
    check_dims(s, b)?;
    let n = s.n;
    let value = b.w.matvec(&s.value);
    let deriv = match (&s.deriv, &b.dw) {
        (Some(jac), Some(dw)) => {
            // D[i][k] = ∂_k (W f)^i
            let mut d = SquareMatrix::zeros(n);
            for i in 0..n {
                for k in 0..n {
                    let mut acc = S::zero();
                    for l in 0..n {
                        acc = acc + dw[k][(i, l)] * s.value[l] + b.w[(i, l)] * jac[l * n + k];
                    }
                    d[(i, k)] = acc;
                }
            }
            Some(d.matmul(&b.w_inv).into_vec())
        }
        _ => None,
    };
    Ok(FieldSample::vector(value, deriv))
}

/// g′ = W⁻ᵀ g W⁻¹, with ∂′g′ from the three-term product rule.
pub fn push_metric<S: Real>(
    s: &FieldSample<S>,
    b: &JacobianBundle<S>,
) -> Result<FieldSample<S>, TensorError> {
    if s.kind != FieldKind::Metric {
        return Err(TensorError::WrongKind {
            expected: "metric",
            got: s.kind.name(),
        });
    }
    check_dims(s, b)?;
    let n = s.n;
    let g = s.metric_matrix();
    let inv_t = b.w_inv.transpose();
    let g_inv = g.matmul(&b.w_inv);
    let value = symmetrized(&inv_t.matmul(&g_inv));

    let deriv = match (s.deriv.is_some(), b.d_w_inv()) {
        (true, Some(dinv)) => {
            // ∂_l g′ in original coordinates.
            let dl: Vec<SquareMatrix<S>> = (0..n)
                .map(|l| {
                    let dg = s.metric_deriv(l).expect("checked above");
                    let side = inv_t.matmul(&g.matmul(&dinv[l]));
                    side.add(&side.transpose())
                        .add(&inv_t.matmul(&dg.matmul(&b.w_inv)))
                })
                .collect();
            let mut out = vec![S::zero(); n * n * n];
            for i in 0..n {
                for j in i..n {
                    for k in 0..n {
                        let mut acc = S::zero();
                        for (l, dm) in dl.iter().enumerate() {
                            let a = (dm[(i, j)] + dm[(j, i)]).scale(0.5);
                            acc = acc + a * b.w_inv[(l, k)];
                        }
                        out[(i * n + j) * n + k] = acc;
                        out[(j * n + i) * n + k] = acc;
                    }
                }
            }
            Some(out)
        }
        _ => None,
    };
    Ok(FieldSample::metric(n, value.into_vec(), deriv))
}

/// Push a sample of either kind.
pub fn push<S: Real>(
    s: &FieldSample<S>,
    b: &JacobianBundle<S>,
) -> Result<FieldSample<S>, TensorError> {
    match s.kind {
        FieldKind::Vector => push_vector(s, b),
        FieldKind::Metric => push_metric(s, b),
    }
}

fn symmetrized<S: Real>(m: &SquareMatrix<S>) -> SquareMatrix<S> {
    let n = m.dim();
    let mut out = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = (m[(i, j)] + m[(j, i)]).scale(0.5);
            out[(i, j)] = a;
            out[(j, i)] = a;
        }
    }
    out
}

#[cfg(test)]
mod tests;
