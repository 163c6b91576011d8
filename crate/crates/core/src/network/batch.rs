//! Batched jet propagation through the MLP with a hand-written backward
//! pass.
//!
//! Every layer activation is stored as a `units × (C·P)` row-major matrix
//! for P points and C jet components per point. Columns are grouped by
//! component: column `c·P + p` holds component `c` of point `p`, where
//! component 0 is the value, 1..=d the gradient and the rest the packed
//! Hessian. Linear layers then act on all components with one GEMM.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::jet::{tri_len, Jet2};
use crate::real::silu_derivs;

use super::TransformNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JetOrder {
    /// Value and gradient (enough for W).
    First,
    /// Value, gradient and Hessian (W and ∂W).
    Second,
}

impl JetOrder {
    pub fn comps(self, d: usize) -> usize {
        match self {
            JetOrder::First => 1 + d,
            JetOrder::Second => 1 + d + tri_len(d),
        }
    }
}

/// Cached forward pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchForward {
    d: usize,
    points: usize,
    order: JetOrder,
    comps: usize,
    /// Layer inputs: `acts[0]` is the seeded input, `acts[k]` the output of
    /// hidden layer k.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    out: Vec<f64>,
    n_out: usize,
}

impl BatchForward {
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn order(&self) -> JetOrder {
        self.order
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    fn cols(&self) -> usize {
        self.comps * self.points
    }

    /// Output component `i` of point `p` as a jet in the inner coordinates.
    /// For first order the Hessian is zero.
    pub fn output_jet(&self, i: usize, p: usize) -> Jet2<f64> {
        let cols = self.cols();
        let row = &self.out[i * cols..(i + 1) * cols];
        let at = |c: usize| row[c * self.points + p];
        let d1 = (0..self.d).map(|k| at(1 + k)).collect();
        let d2 = match self.order {
            JetOrder::First => vec![0.0; tri_len(self.d)],
            JetOrder::Second => (0..tri_len(self.d)).map(|t| at(1 + self.d + t)).collect(),
        };
        Jet2::from_packed(at(0), d1, d2)
    }

    pub fn output_jets(&self, p: usize) -> Vec<Jet2<f64>> {
        (0..self.n_out).map(|i| self.output_jet(i, p)).collect()
    }

    /// A zeroed adjoint buffer shaped like the output.
    pub fn zero_adjoint(&self) -> Vec<f64> {
        vec![0.0; self.n_out * self.cols()]
    }

    /// Store the adjoint of point `p`'s output component `i`; `adj` is laid
    /// out as value, gradient, packed Hessian (Hessian part ignored for
    /// first order).
    pub fn set_adjoint(&self, buf: &mut [f64], i: usize, p: usize, adj: &[f64]) {
        let cols = self.cols();
        for c in 0..self.comps {
            buf[i * cols + c * self.points + p] = adj[c];
        }
    }
}

fn view(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix shape")
}

fn view_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("matrix shape")
}

impl TransformNet {
    /// Propagate seeded jets of the inner points `xs` through the network.
    pub fn forward_batch(&self, xs: &[Vec<f64>], order: JetOrder) -> BatchForward {
        let d = self.inner_dim();
        let points = xs.len();
        let comps = order.comps(d);
        let cols = comps * points;
        let mut input = vec![0.0; d * cols];
        for (p, x) in xs.iter().enumerate() {
            for k in 0..d {
                input[k * cols + p] = x[k];
                input[k * cols + (1 + k) * points + p] = 1.0;
            }
        }
        let layers = self.layers();
        let params = self.params();
        let mut acts = vec![input];
        let mut pre = Vec::new();
        let mut out = Vec::new();
        for (li, l) in layers.iter().enumerate() {
            let w = view(&params[l.w_off..l.b_off], l.fan_out, l.fan_in);
            let b = &params[l.b_off..l.b_off + l.fan_out];
            let mut a = vec![0.0; l.fan_out * cols];
            {
                let h = view(acts.last().unwrap(), l.fan_in, cols);
                general_mat_mul(1.0, &w, &h, 0.0, &mut view_mut(&mut a, l.fan_out, cols));
            }
            for i in 0..l.fan_out {
                for v in &mut a[i * cols..i * cols + points] {
                    *v += b[i];
                }
            }
            if li + 1 == layers.len() {
                out = a;
            } else {
                let h = silu_forward(&a, l.fan_out, d, points, order);
                pre.push(a);
                acts.push(h);
            }
        }
        BatchForward {
            d,
            points,
            order,
            comps,
            acts,
            pre,
            out,
            n_out: layers.last().unwrap().fan_out,
        }
    }

    /// Parameter gradient given the adjoint of every output jet component.
    pub fn backward_batch(&self, fwd: &BatchForward, adjoint: &[f64]) -> Vec<f64> {
        let layers = self.layers();
        let params = self.params();
        let cols = fwd.cols();
        let mut grad = vec![0.0; params.len()];
        let mut g = adjoint.to_vec();
        for li in (0..layers.len()).rev() {
            let l = layers[li];
            let h = &fwd.acts[li];
            {
                let gv = view(&g, l.fan_out, cols);
                let hv = view(h, l.fan_in, cols);
                let (gw, gb) = grad[l.w_off..l.b_off + l.fan_out].split_at_mut(l.fan_in * l.fan_out);
                general_mat_mul(1.0, &gv, &hv.t(), 0.0, &mut view_mut(gw, l.fan_out, l.fan_in));
                for i in 0..l.fan_out {
                    gb[i] = g[i * cols..i * cols + fwd.points].iter().sum();
                }
            }
            if li == 0 {
                break;
            }
            let w = view(&params[l.w_off..l.b_off], l.fan_out, l.fan_in);
            let mut gh = vec![0.0; l.fan_in * cols];
            general_mat_mul(
                1.0,
                &w.t(),
                &view(&g, l.fan_out, cols),
                0.0,
                &mut view_mut(&mut gh, l.fan_in, cols),
            );
            g = silu_backward(&fwd.pre[li - 1], &gh, l.fan_in, fwd.d, fwd.points, fwd.order);
        }
        grad
    }
}

fn silu_forward(a: &[f64], units: usize, d: usize, points: usize, order: JetOrder) -> Vec<f64> {
    let comps = order.comps(d);
    let cols = comps * points;
    let mut h = vec![0.0; units * cols];
    for i in 0..units {
        let ar = &a[i * cols..(i + 1) * cols];
        let hr = &mut h[i * cols..(i + 1) * cols];
        for p in 0..points {
            let [s0, s1, s2, _] = silu_derivs(ar[p]);
            hr[p] = s0;
            for k in 0..d {
                hr[(1 + k) * points + p] = s1 * ar[(1 + k) * points + p];
            }
            if order == JetOrder::Second {
                let mut t = 0;
                for k in 0..d {
                    let ak = ar[(1 + k) * points + p];
                    for l in k..d {
                        let al = ar[(1 + l) * points + p];
                        let c = (1 + d + t) * points + p;
                        hr[c] = s1 * ar[c] + s2 * ak * al;
                        t += 1;
                    }
                }
            }
        }
    }
    h
}

fn silu_backward(
    a: &[f64],
    gh: &[f64],
    units: usize,
    d: usize,
    points: usize,
    order: JetOrder,
) -> Vec<f64> {
    let comps = order.comps(d);
    let cols = comps * points;
    let mut ga = vec![0.0; units * cols];
    for i in 0..units {
        let ar = &a[i * cols..(i + 1) * cols];
        let gr = &gh[i * cols..(i + 1) * cols];
        let out = &mut ga[i * cols..(i + 1) * cols];
        for p in 0..points {
            let [_, s1, s2, s3] = silu_derivs(ar[p]);
            let mut g0 = gr[p] * s1;
            for k in 0..d {
                let c = (1 + k) * points + p;
                g0 += gr[c] * s2 * ar[c];
                out[c] = gr[c] * s1;
            }
            if order == JetOrder::Second {
                let mut t = 0;
                for k in 0..d {
                    let ck = (1 + k) * points + p;
                    let ak = ar[ck];
                    for l in k..d {
                        let cl = (1 + l) * points + p;
                        let al = ar[cl];
                        let c = (1 + d + t) * points + p;
                        let g = gr[c];
                        out[c] = g * s1;
                        g0 += g * (s2 * ar[c] + s3 * ak * al);
                        out[ck] += g * s2 * al;
                        out[cl] += g * s2 * ak;
                        t += 1;
                    }
                }
            }
            out[p] = g0;
        }
    }
    ga
}
