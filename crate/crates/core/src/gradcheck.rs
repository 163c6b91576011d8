//! Finite-difference checks of every derivative the trainer relies on:
//! parameter gradients of the loss, the network Jacobian W and its
//! derivative ∂W, the batched jet path, and the analytic fields.
//!
//! Also hosts the Hamiltonicity property check (M J + Jᵀ M vanishes
//! exactly for f = M∇H).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::network::{residual_jets, JetOrder, TransformNet};
use crate::symmetry::{residual_hamiltonicity, PhaseLayout, SINGULAR_PENALTY};
use crate::systems::{SystemDef, SystemError, SystemId};
use crate::tensor_calc::{FieldSample, SquareMatrix};
use crate::trainer::{gradient_check, NoiseFrame, Objective, StageConfig, TrainError};

/// Parameter-gradient tolerance (relative).
pub const GRAD_TOL: f64 = 1e-5;
/// ∂W tolerance (relative, max-norm).
pub const DW_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct NetCheck {
    pub system: SystemId,
    pub widths: Vec<usize>,
    pub grad_err: f64,
    pub w_err: f64,
    pub dw_err: f64,
    /// Batched vs per-point jets.
    pub batch_err: f64,
}

impl NetCheck {
    pub fn passed(&self) -> bool {
        self.grad_err < GRAD_TOL && self.w_err < DW_TOL && self.dw_err < DW_TOL && self.batch_err < 1e-10
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub nets: Vec<NetCheck>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        !self.nets.is_empty() && self.nets.iter().all(NetCheck::passed)
    }

    pub fn worst(&self) -> (f64, f64) {
        self.nets.iter().fold((0.0, 0.0), |(g, d), c| {
            (g.max(c.grad_err), d.max(c.dw_err.max(c.w_err)))
        })
    }
}

fn max_abs(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn rel(err: f64, scale: f64) -> f64 {
    err / scale.max(1e-6)
}

/// W and ∂W of `map` at `z` by central differences of the map and of W.
fn fd_jacobian(map: impl Fn(&[f64]) -> Vec<f64>, z: &[f64], h: f64) -> SquareMatrix<f64> {
    let n = z.len();
    let mut w = SquareMatrix::zeros(n);
    let mut zp = z.to_vec();
    for j in 0..n {
        zp[j] = z[j] + h;
        let up = map(&zp);
        zp[j] = z[j] - h;
        let down = map(&zp);
        zp[j] = z[j];
        for i in 0..n {
            w[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    w
}

fn fd_dw(w_of: impl Fn(&[f64]) -> SquareMatrix<f64>, z: &[f64], h: f64) -> Vec<SquareMatrix<f64>> {
    let n = z.len();
    let mut zp = z.to_vec();
    (0..n)
        .map(|k| {
            zp[k] = z[k] + h;
            let up = w_of(&zp);
            zp[k] = z[k] - h;
            let down = w_of(&zp);
            zp[k] = z[k];
            up.sub(&down).scale(0.5 / h)
        })
        .collect()
}

fn mat_err(a: &SquareMatrix<f64>, b: &SquareMatrix<f64>) -> (f64, f64) {
    let diff = max_abs(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y));
    (diff, max_abs(a.as_slice().iter().copied()))
}

/// Compare W, ∂W and the batched jets of `net` against differences at `pts`.
pub fn network_derivative_errors(net: &TransformNet, pts: &[Vec<f64>]) -> Result<(f64, f64, f64), TrainError> {
    let (mut w_err, mut dw_err, mut batch_err) = (0.0f64, 0.0f64, 0.0f64);
    let input = net.input_map();
    let inner = pts.iter().map(|z| input.reduce(z)).collect::<Result<Vec<_>, _>>()?;
    let fwd = net.forward_batch(&inner, JetOrder::Second);
    for (p, z) in pts.iter().enumerate() {
        let b = net.forward_bundle(z, true)?;
        let w_fd = fd_jacobian(|x| net.forward(x).expect("in domain"), z, 1e-5);
        let (d, s) = mat_err(&b.w, &w_fd);
        w_err = w_err.max(rel(d, s));
        let dw = b.dw.as_ref().expect("second order");
        let dw_fd = fd_dw(|x| net.forward_bundle(x, false).expect("in domain").w, z, 1e-5);
        let (mut d, mut s) = (0.0f64, 0.0f64);
        for (a, f) in dw.iter().zip(&dw_fd) {
            let (dk, sk) = mat_err(a, f);
            d = d.max(dk);
            s = s.max(sk);
        }
        dw_err = dw_err.max(rel(d, s));
        // batched path, lifted to z′ jets as in training
        let out = residual_jets::<f64>(input, &fwd.output_jets(p), z)?;
        for (i, jet) in out.iter().enumerate() {
            let n = z.len();
            let mut e = (jet.value() - b.z[i]).abs();
            for j in 0..n {
                e = e.max((jet.d1(j) - b.w[(i, j)]).abs());
                for k in 0..n {
                    e = e.max((jet.d2(k, j) - dw[k][(i, j)]).abs());
                }
            }
            batch_err = batch_err.max(e);
        }
    }
    Ok((w_err, dw_err, batch_err))
}

/// Gradient checks on `count` small random networks cycling through the
/// systems and their target losses.
pub fn check_networks(count: usize, seed: u64) -> Result<GradReport, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nets = Vec::with_capacity(count);
    for k in 0..count {
        let sys = SystemDef::new(SystemId::ALL[k % SystemId::ALL.len()]);
        let layers = rng.gen_range(1..=2);
        let widths: Vec<usize> = (0..layers).map(|_| rng.gen_range(3..=8)).collect();
        let mut net = TransformNet::init(sys.dim(), &widths, sys.input_map(), rng.gen())?;
        // move away from the identity initialisation so every layer matters
        for p in net.params_mut() {
            *p += rng.gen_range(-0.05..0.05);
        }
        let tags = sys.target_tags();
        let mut cfg = StageConfig::new(&tags, 1, &[1e-3]);
        cfg.batch = 10;
        cfg.seed = rng.gen();
        let obj = Objective::for_stage(&sys, &cfg, NoiseFrame::Transformed, SINGULAR_PENALTY)?;
        let grad_err = gradient_check(&obj, &net, 25, 1e-4, rng.gen())?;
        let pts = sys.sample_points(4, rng.gen(), |_| true)?;
        let (w_err, dw_err, batch_err) = network_derivative_errors(&net, &pts)?;
        nets.push(NetCheck {
            system: sys.id,
            widths,
            grad_err,
            w_err,
            dw_err,
            batch_err,
        });
    }
    Ok(GradReport { nets })
}

/// Analytic derivatives of a system's field and ground-truth transform
/// against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDerivCheck {
    pub field_err: f64,
    /// `None` when the system has no closed-form transform at its
    /// parameters.
    pub w_err: Option<f64>,
    pub dw_err: Option<f64>,
}

impl SystemDerivCheck {
    pub fn passed(&self) -> bool {
        self.field_err < DW_TOL && self.w_err.map_or(true, |e| e < DW_TOL) && self.dw_err.map_or(true, |e| e < DW_TOL)
    }
}

pub fn check_system(sys: &SystemDef, points: usize, seed: u64) -> Result<SystemDerivCheck, TrainError> {
    let probe = sys.sample_points(1, seed, |_| true)?;
    let has_gt = !matches!(sys.ground_truth(&probe[0]), Err(SystemError::NoGroundTruth(_)));
    let pts = sys.sample_points(points, seed, |z| !has_gt || sys.ground_truth_bundle(z).is_ok())?;
    let h = 1e-5;
    let (mut field_err, mut w_err, mut dw_err) = (0.0f64, 0.0f64, 0.0f64);
    for z in &pts {
        let f = sys.eval(z)?;
        let n = z.len();
        let deriv = f.deriv.as_ref().expect("fields carry derivatives");
        let comps = f.value.len();
        let mut zp = z.clone();
        let (mut d, mut s) = (0.0f64, 0.0f64);
        for k in 0..n {
            zp[k] = z[k] + h;
            let up = sys.eval(&zp)?.value;
            zp[k] = z[k] - h;
            let down = sys.eval(&zp)?.value;
            zp[k] = z[k];
            for c in 0..comps {
                let fd = (up[c] - down[c]) / (2.0 * h);
                let an = deriv[c * n + k];
                d = d.max((fd - an).abs());
                s = s.max(an.abs());
            }
        }
        field_err = field_err.max(rel(d, s));
        if has_gt {
            let b = sys.ground_truth_bundle(z)?;
            let w_fd = fd_jacobian(|x| sys.ground_truth(x).expect("in domain"), z, h);
            let (d, s) = mat_err(&b.w, &w_fd);
            w_err = w_err.max(rel(d, s));
            let dw_fd = fd_dw(|x| sys.ground_truth_bundle(x).expect("in domain").w, z, h);
            let (mut d, mut s) = (0.0f64, 0.0f64);
            for (a, f) in b.dw.as_ref().expect("second order").iter().zip(&dw_fd) {
                let (dk, sk) = mat_err(a, f);
                d = d.max(dk);
                s = s.max(sk);
            }
            dw_err = dw_err.max(rel(d, s));
        }
    }
    Ok(SystemDerivCheck {
        field_err,
        w_err: has_gt.then_some(w_err),
        dw_err: has_gt.then_some(dw_err),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamLemmaReport {
    /// Largest ‖M J + Jᵀ M‖ over the Hamiltonian fields.
    pub max_hamiltonian: f64,
    /// Smallest residual norm over the non-gradient fields.
    pub min_non_gradient: f64,
}

impl HamLemmaReport {
    pub fn passed(&self) -> bool {
        self.max_hamiltonian < 1e-12 && self.min_non_gradient > 1e-3
    }
}

fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> SquareMatrix<f64> {
    SquareMatrix::from_vec(n, (0..n * n).map(|_| rng.sample(StandardNormal)).collect())
}

fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> SquareMatrix<f64> {
    let a = random_matrix(n, rng);
    a.add(&a.transpose()).scale(0.5)
}

/// `count` quadratic Hamiltonians H = ½ zᵀ S z (f = M S z) and `count`
/// fields whose Jacobian carries a random non-Hamiltonian part M K with K
/// antisymmetric, in phase-space dimensions 2, 4 and 6.
pub fn hamiltonicity_lemma(count: usize, seed: u64) -> HamLemmaReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_hamiltonian = 0.0f64;
    let mut min_non_gradient = f64::INFINITY;
    for k in 0..count {
        let n = 2 * (k % 3 + 1);
        let phase = PhaseLayout::interleaved(n);
        let m = phase.symplectic();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();

        let jac = m.matmul(&random_symmetric(n, &mut rng));
        let f = FieldSample::vector(jac.matvec(&z), Some(jac.into_vec()));
        let r = residual_hamiltonicity(&f, &phase).expect("even dimension");
        max_hamiltonian = max_hamiltonian.max(r.frobenius_sq().sqrt());

        let raw = random_matrix(n, &mut rng);
        let anti = raw.sub(&raw.transpose()).scale(0.5);
        let jac = m.matmul(&random_symmetric(n, &mut rng).add(&anti));
        let f = FieldSample::vector(jac.matvec(&z), Some(jac.into_vec()));
        let r = residual_hamiltonicity(&f, &phase).expect("even dimension");
        min_non_gradient = min_non_gradient.min(r.frobenius_sq().sqrt());
    }
    HamLemmaReport {
        max_hamiltonian,
        min_non_gradient,
    }
}
