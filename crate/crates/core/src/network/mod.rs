//! The residual transformation network z ↦ z′ = z + f_NN(z).
//!
//! Parameters live in one flat array, layer by layer: the weight matrix
//! (row major, `fan_out × fan_in`) followed by the bias vector. Hidden
//! layers use silu; the output layer is linear and starts at exactly zero,
//! so a fresh network is the identity map.

mod adam;
mod batch;
mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::jet::Jet2;
use crate::real::Real;
use crate::tensor_calc::{JacobianBundle, TensorError};

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use batch::{BatchForward, JetOrder};
pub use checkpoint::{read_checkpoint, write_checkpoint};

pub const DEFAULT_WIDTHS: [usize; 2] = [128, 128];

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },
    #[error("parameter length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("radial reduction needs r > 0")]
    ZeroRadius,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the network's inputs are derived from the system coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMap {
    /// The network sees z directly.
    Identity,
    /// 4D (t, x, y, z) reduced to (t, r); the learned (t, r) → (t′, r′)
    /// is embedded back as (t′, r′·x/r, r′·y/r, r′·z/r).
    RadialTime,
}

impl InputMap {
    pub fn inner_dim(self, n: usize) -> usize {
        match self {
            InputMap::Identity => n,
            InputMap::RadialTime => 2,
        }
    }

    /// Network input for the system point `z`.
    pub fn reduce(self, z: &[f64]) -> Result<Vec<f64>, NetError> {
        match self {
            InputMap::Identity => Ok(z.to_vec()),
            InputMap::RadialTime => {
                let r = (z[1] * z[1] + z[2] * z[2] + z[3] * z[3]).sqrt();
                if !(r > 0.0) {
                    return Err(NetError::ZeroRadius);
                }
                Ok(vec![z[0], r])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w_off: usize,
    pub b_off: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformNet {
    n: usize,
    widths: Vec<usize>,
    input: InputMap,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

fn layout(n_inner: usize, widths: &[usize]) -> (Vec<Layer>, usize) {
    let mut dims = vec![n_inner];
    dims.extend_from_slice(widths);
    dims.push(n_inner);
    let mut off = 0;
    let layers = dims
        .windows(2)
        .map(|w| {
            let l = Layer {
                fan_in: w[0],
                fan_out: w[1],
                w_off: off,
                b_off: off + w[0] * w[1],
            };
            off = l.b_off + w[1];
            l
        })
        .collect();
    (layers, off)
}

impl TransformNet {
    /// Fresh network for an `n`-dimensional system.
    ///
    /// Hidden weights and biases are drawn from U(−1/√fan_in, 1/√fan_in);
    /// the output layer is zero.
    pub fn init(n: usize, widths: &[usize], input: InputMap, seed: u64) -> Result<Self, NetError> {
        if n == 0 || widths.is_empty() || widths.contains(&0) {
            return Err(NetError::Architecture(format!(
                "dimension {n}, widths {widths:?}"
            )));
        }
        if input == InputMap::RadialTime && n != 4 {
            return Err(NetError::Architecture(
                "radial reduction needs a 4D system".into(),
            ));
        }
        let inner = input.inner_dim(n);
        let (layers, len) = layout(inner, widths);
        let mut params = vec![0.0; len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &layers[..layers.len() - 1] {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            for p in &mut params[l.w_off..l.b_off + l.fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(TransformNet {
            n,
            widths: widths.to_vec(),
            input,
            layers,
            params,
        })
    }

    /// Rebuild a network from an architecture and a flat parameter array.
    pub fn from_params(
        n: usize,
        widths: &[usize],
        input: InputMap,
        params: Vec<f64>,
    ) -> Result<Self, NetError> {
        let mut net = Self::init(n, widths, input, 0)?;
        net.set_params(params)?;
        Ok(net)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn inner_dim(&self) -> usize {
        self.input.inner_dim(self.n)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_map(&self) -> InputMap {
        self.input
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<(), NetError> {
        if params.len() != self.params.len() {
            return Err(NetError::Length {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub(crate) fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Raw network output f_NN at an inner point (no residual connection).
    pub fn raw_output(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let w = &self.params[l.w_off..l.b_off];
            let b = &self.params[l.b_off..l.b_off + l.fan_out];
            let mut out: Vec<f64> = (0..l.fan_out)
                .map(|i| {
                    b[i] + w[i * l.fan_in..(i + 1) * l.fan_in]
                        .iter()
                        .zip(&h)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .collect();
            if li != last {
                for v in &mut out {
                    *v = v.silu();
                }
            }
            h = out;
        }
        h
    }

    /// z′ for a system point.
    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>, NetError> {
        let x = self.input.reduce(z)?;
        let f = self.raw_output(&x);
        match self.input {
            InputMap::Identity => Ok(z.iter().zip(&f).map(|(a, b)| a + b).collect()),
            InputMap::RadialTime => {
                let r = x[1];
                let rp = r + f[1];
                Ok(vec![
                    z[0] + f[0],
                    rp * z[1] / r,
                    rp * z[2] / r,
                    rp * z[3] / r,
                ])
            }
        }
    }

    /// Jacobian bundle of the transformation at a system point.
    pub fn forward_bundle(&self, z: &[f64], second_order: bool) -> Result<JacobianBundle<f64>, NetError> {
        let x = self.input.reduce(z)?;
        let seeds = Jet2::seed_all(&x);
        let f = forward_jets(self, &self.params, &seeds);
        let out = residual_jets(self.input, &f, z)?;
        Ok(JacobianBundle::from_jets(&out, second_order)?)
    }
}

/// Network output jets at the given input jets, for any scalar type.
///
/// This is the reference path: taped parameters give reverse-over-forward
/// derivatives through ordinary jet arithmetic.
pub fn forward_jets<S: Real>(net: &TransformNet, params: &[S], x: &[Jet2<S>]) -> Vec<Jet2<S>> {
    let d = x[0].dim();
    let last = net.layers.len() - 1;
    let mut h: Vec<Jet2<S>> = x.to_vec();
    for (li, l) in net.layers.iter().enumerate() {
        let mut out = Vec::with_capacity(l.fan_out);
        for i in 0..l.fan_out {
            let mut acc = Jet2::constant(d, params[l.b_off + i]);
            for (j, hj) in h.iter().enumerate() {
                let w = params[l.w_off + i * l.fan_in + j];
                acc = acc.add(&hj.mul_scalar(w));
            }
            out.push(if li == last { acc } else { acc.silu() });
        }
        h = out;
    }
    h
}

/// Jets of z′ in system coordinates, given network output jets `f` taken
/// with respect to the seeded inner coordinates.
pub fn residual_jets<S: Real>(
    input: InputMap,
    f: &[Jet2<S>],
    z: &[f64],
) -> Result<Vec<Jet2<S>>, NetError> {
    match input {
        InputMap::Identity => {
            let n = z.len();
            Ok(f.iter()
                .enumerate()
                .map(|(k, fk)| fk.add(&Jet2::seed(n, k, S::cst(z[k]))))
                .collect())
        }
        InputMap::RadialTime => {
            let x = input.reduce(z)?;
            let out2: Vec<Jet2<S>> = f
                .iter()
                .enumerate()
                .map(|(k, fk)| fk.add(&Jet2::seed(2, k, S::cst(x[k]))))
                .collect();
            embed_radial(&out2, z)
        }
    }
}

/// Embed (t, r) → (t′, r′) jets, taken with respect to (t, r), as the 4D
/// map (t, x, y, z) → (t′, r′x/r, r′y/r, r′z/r) with jets in (t, x, y, z).
pub fn embed_radial<S: Real>(out2: &[Jet2<S>], z: &[f64]) -> Result<Vec<Jet2<S>>, NetError> {
    let zj: Vec<Jet2<S>> = Jet2::seed_all(z)
        .iter()
        .map(|j| j.map_scalar(S::cst))
        .collect();
    let r2 = zj[1].mul(&zj[1]).add(&zj[2].mul(&zj[2])).add(&zj[3].mul(&zj[3]));
    let r = r2.sqrt().map_err(|_| NetError::ZeroRadius)?;
    if !(r.value().value() > 0.0) {
        return Err(NetError::ZeroRadius);
    }
    let inv_r = r.recip().map_err(|_| NetError::ZeroRadius)?;
    let inner = [zj[0].clone(), r];
    let lift = |o: &Jet2<S>| Jet2::compose(o.value(), o.grad(), &o.hessian_full(), &inner);
    let tp = lift(&out2[0]);
    let rp = lift(&out2[1]);
    let scale = rp.mul(&inv_r);
    Ok(vec![tp, scale.mul(&zj[1]), scale.mul(&zj[2]), scale.mul(&zj[3])])
}

/// 4D bundle from a bundle of the (t, r) → (t′, r′) map at the reduced
/// point of `z4`.
pub fn reduce2d_embed(
    bundle2d: &JacobianBundle<f64>,
    z4: &[f64],
) -> Result<JacobianBundle<f64>, NetError> {
    let second = bundle2d.dw.is_some();
    let out2: Vec<Jet2<f64>> = (0..2)
        .map(|i| {
            Jet2::from_parts(
                bundle2d.z[i],
                (0..2).map(|j| bundle2d.w[(i, j)]).collect(),
                |k, l| bundle2d.dw.as_ref().map_or(0.0, |dw| dw[k][(i, l)]),
            )
        })
        .collect();
    let out = embed_radial(&out2, z4)?;
    Ok(JacobianBundle::from_jets(&out, second)?)
}

/// Index of the first non-finite entry, if any.
pub fn first_nonfinite(xs: &[f64]) -> Option<usize> {
    xs.iter().position(|x| !x.is_finite())
}
