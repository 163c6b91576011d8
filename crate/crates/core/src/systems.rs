//! The six test systems: obfuscated fields and metrics, their sampling
//! laws, closed-form simplifying transformations and target symmetries.
//!
//! Phase-space systems order coordinates as (x₁, p₁, x₂, p₂). Spacetime
//! systems use (t, x, y, z).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::jet::{Jet2, JetError};
use crate::network::InputMap;
use crate::symmetry::{
    loss_eval, minkowski, LossReport, PhaseLayout, SymmetryError, SymmetrySpec, TransformedPoint,
};
use crate::tensor_calc::{push, FieldKind, FieldSample, JacobianBundle, TensorError};

/// Give up when fewer than 1 in 100 draws land in the domain.
const MIN_ACCEPT_RATE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("unknown system `{0}`")]
    Unknown(String),
    #[error("system {system}: point outside the domain ({constraint})")]
    Domain {
        system: SystemId,
        constraint: &'static str,
    },
    #[error("system {0} has no closed-form simplifying transformation for these parameters")]
    NoGroundTruth(SystemId),
    #[error("system {system}: rejection sampling accepted {accepted} of {drawn} draws")]
    Rejection {
        system: SystemId,
        accepted: usize,
        drawn: usize,
    },
    #[error("unknown parameter `{key}` for system {system}")]
    UnknownParam { system: SystemId, key: String },
    #[error("invalid noise level {0}")]
    Noise(f64),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemId {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl SystemId {
    pub const ALL: [SystemId; 6] = [
        SystemId::A,
        SystemId::B,
        SystemId::C,
        SystemId::D,
        SystemId::E,
        SystemId::F,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemId::A => "uniform motion",
            SystemId::B => "harmonic oscillator",
            SystemId::C => "Kepler problem",
            SystemId::D => "linearized double pendulum",
            SystemId::E => "expanding universe",
            SystemId::F => "Schwarzschild black hole",
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for SystemId {
    type Err = SystemError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(SystemId::A),
            "B" => Ok(SystemId::B),
            "C" => Ok(SystemId::C),
            "D" => Ok(SystemId::D),
            "E" => Ok(SystemId::E),
            "F" => Ok(SystemId::F),
            _ => Err(SystemError::Unknown(s.to_string())),
        }
    }
}

/// Physical parameters. Only the ones relevant to a system are used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// FRW curvature κ in g_ij = −t²(δ_ij + κ x_i x_j / (1 − κ r²)).
    /// κ = −1 is the Milne (flat) case; 0 and −2 are curved controls.
    pub kappa: f64,
    pub m1: f64,
    pub m2: f64,
    pub g: f64,
    pub l: f64,
    /// Schwarzschild radius 2M.
    pub two_m: f64,
    /// Kepler samples are kept only where the hidden radius exceeds this.
    pub min_radius: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            kappa: -1.0,
            m1: 1.0,
            m2: 1.0,
            g: 1.0,
            l: 1.0,
            two_m: 1.0,
            min_radius: 0.5,
        }
    }
}

impl SystemParams {
    pub fn set(&mut self, system: SystemId, key: &str, value: f64) -> Result<(), SystemError> {
        let slot = match (system, key) {
            (SystemId::E, "kappa") => &mut self.kappa,
            (SystemId::D, "m1") => &mut self.m1,
            (SystemId::D, "m2") => &mut self.m2,
            (SystemId::D, "g") => &mut self.g,
            (SystemId::D, "l") => &mut self.l,
            (SystemId::F, "two_m") => &mut self.two_m,
            (SystemId::C, "min_radius") => &mut self.min_radius,
            _ => {
                return Err(SystemError::UnknownParam {
                    system,
                    key: key.to_string(),
                })
            }
        };
        *slot = value;
        Ok(())
    }

    fn pendulum(&self) -> (f64, f64, f64) {
        let c = (self.m1 + self.m2) * self.g / (self.m1 * self.l);
        let k = self.m2 * self.g / (self.m1 * self.l);
        let a = ((self.m1 + self.m2) / self.m2).sqrt();
        (c, k, a)
    }

    /// Squared normal-mode frequencies (ω₊², ω₋²) of the double pendulum.
    pub fn normal_mode_frequencies(&self) -> (f64, f64) {
        let (c, _, _) = self.pendulum();
        let s = (self.m2 / (self.m1 + self.m2)).sqrt();
        (c * (1.0 + s), c * (1.0 - s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemDef {
    pub id: SystemId,
    pub params: SystemParams,
}

/// Points together with their clean field samples and optional noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub points: Vec<Vec<f64>>,
    pub fields: Vec<FieldSample<f64>>,
    /// Per-point additive noise on the field components, if any.
    pub noise: Option<Vec<Vec<f64>>>,
    pub sigma: f64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

type J = Jet2<f64>;

fn c(n: usize, v: f64) -> J {
    J::constant(n, v)
}

impl SystemDef {
    pub fn new(id: SystemId) -> Self {
        SystemDef {
            id,
            params: SystemParams::default(),
        }
    }

    pub fn with_params(id: SystemId, params: SystemParams) -> Self {
        SystemDef { id, params }
    }

    pub fn dim(&self) -> usize {
        match self.id {
            SystemId::A | SystemId::B => 2,
            _ => 4,
        }
    }

    pub fn kind(&self) -> FieldKind {
        match self.id {
            SystemId::E | SystemId::F => FieldKind::Metric,
            _ => FieldKind::Vector,
        }
    }

    /// Number of field components (n for vectors, n² for metrics).
    pub fn components(&self) -> usize {
        match self.kind() {
            FieldKind::Vector => self.dim(),
            FieldKind::Metric => self.dim() * self.dim(),
        }
    }

    pub fn phase_layout(&self) -> PhaseLayout {
        PhaseLayout::interleaved(self.dim())
    }

    pub fn input_map(&self) -> InputMap {
        match self.id {
            SystemId::F => InputMap::RadialTime,
            _ => InputMap::Identity,
        }
    }

    /// Symmetries the simplified system exhibits, in staging order.
    pub fn target_tags(&self) -> Vec<&'static str> {
        match self.id {
            SystemId::A => vec!["ham", "trans:0"],
            SystemId::B => vec!["ham", "eqv:so2"],
            SystemId::C => vec!["ham", "can:so2"],
            SystemId::D => vec!["ham", "mod:2+2"],
            SystemId::E => vec!["flat:minkowski"],
            SystemId::F => vec!["flat:spatial"],
        }
    }

    /// Further manifest symmetries of the simplified form that hold without
    /// being trained for (checked by the oracle suite).
    pub fn implied_tags(&self) -> Vec<&'static str> {
        match self.id {
            SystemId::E => vec!["inv:so31", "trans:0,1,2,3"],
            SystemId::F => vec!["inv:so3", "trans:0"],
            _ => vec![],
        }
    }

    pub fn check_domain(&self, z: &[f64]) -> Result<(), SystemError> {
        let bad = |constraint| {
            Err(SystemError::Domain {
                system: self.id,
                constraint,
            })
        };
        if z.len() != self.dim() || z.iter().any(|v| !v.is_finite()) {
            return bad("finite point of the system dimension");
        }
        match self.id {
            SystemId::A => {
                if !(z[0] - z[1] > 0.0) {
                    return bad("a − b > 0");
                }
            }
            SystemId::B | SystemId::C => {
                if z.iter().any(|&v| !(v > -1.0)) {
                    return bad("all components > −1");
                }
                if self.id == SystemId::C {
                    let q = (1.0 + z[0]).ln().powi(2) + (1.0 + z[2]).ln().powi(2);
                    if !(q > 0.0) {
                        return bad("nonzero hidden radius");
                    }
                }
            }
            SystemId::D => {}
            SystemId::E => {
                let r2 = z[1] * z[1] + z[2] * z[2] + z[3] * z[3];
                if !(1.0 - self.params.kappa * r2 > 0.0) {
                    return bad("1 − κ r² > 0");
                }
            }
            SystemId::F => {
                let r = (z[1] * z[1] + z[2] * z[2] + z[3] * z[3]).sqrt();
                if !(r > self.params.two_m) {
                    return bad("r > 2M");
                }
            }
        }
        Ok(())
    }

    fn field_jets(&self, z: &[J]) -> Result<Vec<J>, SystemError> {
        let n = z.len();
        let one = |j: &J| j.add_scalar(1.0);
        Ok(match self.id {
            SystemId::A => {
                let s = z[0].add(&z[1]).scale(0.5);
                let d = z[0].sub(&z[1]).scale(0.5).ln()?;
                let v = s.mul(&d);
                vec![v.clone(), v]
            }
            SystemId::B => {
                let (a, b) = (one(&z[0]), one(&z[1]));
                vec![a.mul(&b.ln()?), b.mul(&a.ln()?).neg()]
            }
            SystemId::C => {
                let (a, b, cc, d) = (one(&z[0]), one(&z[1]), one(&z[2]), one(&z[3]));
                let (la, lc) = (a.ln()?, cc.ln()?);
                let q = la.mul(&la).add(&lc.mul(&lc));
                let den = q.mul(&q.sqrt()?).scale(8.0);
                vec![
                    a.mul(&b.ln()?),
                    b.mul(&la).div(&den)?.neg(),
                    cc.mul(&d.ln()?),
                    d.mul(&lc).div(&den)?.neg(),
                ]
            }
            SystemId::D => {
                let (cc, k, _) = self.params.pendulum();
                vec![
                    z[1].clone(),
                    z[0].scale(-cc).add(&z[2].scale(k)),
                    z[3].clone(),
                    z[0].sub(&z[2]).scale(cc),
                ]
            }
            SystemId::E => {
                let kappa = self.params.kappa;
                let t2 = z[0].mul(&z[0]);
                let r2 = z[1].mul(&z[1]).add(&z[2].mul(&z[2])).add(&z[3].mul(&z[3]));
                let fac = r2.scale(-kappa).add_scalar(1.0).recip()?.scale(kappa);
                let mut g = vec![c(n, 0.0); 16];
                g[0] = c(n, 1.0);
                for i in 1..4 {
                    for j in i..4 {
                        let mut s = z[i].mul(&z[j]).mul(&fac);
                        if i == j {
                            s = s.add_scalar(1.0);
                        }
                        let v = s.mul(&t2).neg();
                        g[i * 4 + j] = v.clone();
                        g[j * 4 + i] = v;
                    }
                }
                g
            }
            SystemId::F => {
                let m2 = self.params.two_m;
                let r2 = z[1].mul(&z[1]).add(&z[2].mul(&z[2])).add(&z[3].mul(&z[3]));
                let r = r2.sqrt()?;
                let mut g = vec![c(n, 0.0); 16];
                g[0] = r.recip()?.scale(-m2).add_scalar(1.0);
                // 2M / ((r − 2M) r²)
                let fac = r.add_scalar(-m2).mul(&r2).recip()?.scale(m2);
                for i in 1..4 {
                    for j in i..4 {
                        let mut v = z[i].mul(&z[j]).mul(&fac);
                        if i == j {
                            v = v.add_scalar(1.0);
                        }
                        let v = v.neg();
                        g[i * 4 + j] = v.clone();
                        g[j * 4 + i] = v;
                    }
                }
                g
            }
        })
    }

    /// Field (or metric) and its coordinate derivatives at `z`.
    pub fn eval(&self, z: &[f64]) -> Result<FieldSample<f64>, SystemError> {
        self.check_domain(z)?;
        let comps = self.field_jets(&J::seed_all(z))?;
        Ok(match self.kind() {
            FieldKind::Vector => FieldSample::vector_from_jets(&comps),
            FieldKind::Metric => FieldSample::metric_from_jets(self.dim(), &comps),
        })
    }

    /// The closed-form simplifying transformation as jets in z.
    ///
    /// For A this is one representative of an infinite family and also
    /// needs a + b > 0.
    pub fn ground_truth_jets(&self, z: &[f64]) -> Result<Vec<J>, SystemError> {
        self.check_domain(z)?;
        let j = J::seed_all(z);
        let two_ln1p = |x: &J| x.add_scalar(1.0).ln().map(|l| l.scale(2.0));
        Ok(match self.id {
            SystemId::A => {
                if !(z[0] + z[1] > 0.0) {
                    return Err(SystemError::Domain {
                        system: self.id,
                        constraint: "a + b > 0 for the closed-form transformation",
                    });
                }
                vec![
                    j[0].add(&j[1]).scale(0.5).ln()?.scale(2.0),
                    j[0].sub(&j[1]).scale(0.5).ln()?.scale(2.0),
                ]
            }
            SystemId::B | SystemId::C => j.iter().map(two_ln1p).collect::<Result<_, _>>()?,
            SystemId::D => {
                let (_, _, a) = self.params.pendulum();
                let plus = |x1: &J, x2: &J| x1.neg().add(&x2.scale(1.0 / a)).scale(0.5);
                let minus = |x1: &J, x2: &J| x1.add(&x2.scale(1.0 / a)).scale(0.5);
                vec![
                    plus(&j[0], &j[2]),
                    plus(&j[1], &j[3]),
                    minus(&j[0], &j[2]),
                    minus(&j[1], &j[3]),
                ]
            }
            SystemId::E => {
                if self.params.kappa != -1.0 {
                    return Err(SystemError::NoGroundTruth(self.id));
                }
                let r2 = j[1].mul(&j[1]).add(&j[2].mul(&j[2])).add(&j[3].mul(&j[3]));
                vec![
                    j[0].mul(&r2.add_scalar(1.0).sqrt()?),
                    j[0].mul(&j[1]),
                    j[0].mul(&j[2]),
                    j[0].mul(&j[3]),
                ]
            }
            SystemId::F => {
                let m2 = self.params.two_m;
                let r = j[1].mul(&j[1]).add(&j[2].mul(&j[2])).add(&j[3].mul(&j[3])).sqrt()?;
                let u = r.scale(1.0 / m2).sqrt()?;
                if !(u.value() > 1.0) {
                    return Err(SystemError::Domain {
                        system: self.id,
                        constraint: "u > 1",
                    });
                }
                let ratio = u.add_scalar(-1.0).div(&u.add_scalar(1.0))?;
                let h = u.scale(2.0).add(&ratio.ln()?).scale(m2);
                vec![j[0].add(&h), j[1].clone(), j[2].clone(), j[3].clone()]
            }
        })
    }

    pub fn ground_truth(&self, z: &[f64]) -> Result<Vec<f64>, SystemError> {
        Ok(self.ground_truth_jets(z)?.iter().map(|j| j.value()).collect())
    }

    pub fn ground_truth_bundle(&self, z: &[f64]) -> Result<JacobianBundle<f64>, SystemError> {
        Ok(JacobianBundle::from_jets(&self.ground_truth_jets(z)?, true)?)
    }

    /// The simplified field value at a transformed point z′.
    pub fn target_value(&self, zp: &[f64]) -> Vec<f64> {
        match self.id {
            SystemId::A => vec![zp[1], 0.0],
            SystemId::B => vec![zp[1], -zp[0]],
            SystemId::C => {
                let r3 = (zp[0] * zp[0] + zp[2] * zp[2]).powf(1.5);
                vec![zp[1], -zp[0] / r3, zp[3], -zp[2] / r3]
            }
            SystemId::D => {
                let (wp, wm) = self.params.normal_mode_frequencies();
                vec![zp[1], -wp * zp[0], zp[3], -wm * zp[2]]
            }
            SystemId::E => minkowski(4).into_vec(),
            SystemId::F => {
                let m2 = self.params.two_m;
                let r = (zp[1] * zp[1] + zp[2] * zp[2] + zp[3] * zp[3]).sqrt();
                let mut g = vec![0.0; 16];
                g[0] = 1.0 - m2 / r;
                for i in 1..4 {
                    let v = -(m2 / r).sqrt() * zp[i] / r;
                    g[i] = v;
                    g[i * 4] = v;
                    g[i * 4 + i] = -1.0;
                }
                g
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        match self.id {
            SystemId::A | SystemId::B | SystemId::C => (0..self.dim()).map(|_| normal()).collect(),
            SystemId::D => (0..4).map(|_| 0.1 * normal()).collect(),
            SystemId::E => {
                let dir: Vec<f64> = (0..3).map(|_| normal()).collect();
                let t = rng.gen_range(0.0..3.0);
                vec![t, dir[0], dir[1], dir[2]]
            }
            SystemId::F => {
                let dir: Vec<f64> = (0..3).map(|_| normal()).collect();
                let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
                let t = rng.gen_range(0.0..3.0);
                let mut r = rng.gen_range(1.1..6.0);
                while r <= 1.1 {
                    r = rng.gen_range(1.1..6.0);
                }
                vec![t, r * dir[0] / norm, r * dir[1] / norm, r * dir[2] / norm]
            }
        }
    }

    /// Extra sampling restriction beyond the field's domain.
    fn sampling_ok(&self, z: &[f64]) -> bool {
        match self.id {
            SystemId::C => {
                let q = (1.0 + z[0]).ln().powi(2) + (1.0 + z[2]).ln().powi(2);
                4.0 * q > self.params.min_radius.powi(2)
            }
            SystemId::F => {
                let r = (z[1] * z[1] + z[2] * z[2] + z[3] * z[3]).sqrt();
                r > 1.1 * self.params.two_m && z[1..].iter().all(|v| v.is_finite())
            }
            _ => true,
        }
    }

    /// Draw `count` in-domain points, rejecting out-of-domain draws.
    pub fn sample_points(
        &self,
        count: usize,
        seed: u64,
        extra: impl Fn(&[f64]) -> bool,
    ) -> Result<Vec<Vec<f64>>, SystemError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        let mut drawn = 0usize;
        while out.len() < count {
            let z = self.draw(&mut rng);
            drawn += 1;
            if self.check_domain(&z).is_ok() && self.sampling_ok(&z) && extra(&z) {
                out.push(z);
            }
            if drawn >= 1000 && (out.len() as f64) < MIN_ACCEPT_RATE * drawn as f64 {
                return Err(SystemError::Rejection {
                    system: self.id,
                    accepted: out.len(),
                    drawn,
                });
            }
        }
        Ok(out)
    }

    /// Training batch: points, clean field samples and, for σ > 0, fixed
    /// Gaussian noise on every field component.
    pub fn sample_batch(&self, count: usize, seed: u64, sigma: f64) -> Result<SampleBatch, SystemError> {
        let points = self.sample_points(count, seed, |_| true)?;
        let fields = points
            .iter()
            .map(|z| self.eval(z))
            .collect::<Result<Vec<_>, _>>()?;
        let batch = SampleBatch {
            points,
            fields,
            noise: None,
            sigma: 0.0,
        };
        inject_noise(batch, sigma, seed ^ 0x9e37_79b9_7f4a_7c15)
    }
}

/// Result of pushing a system through its closed-form transformation.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub system: SystemId,
    /// Losses of the target and implied symmetries.
    pub losses: LossReport,
    /// Largest |T′ − T_target| over all points and components.
    pub max_value_error: f64,
    pub points: usize,
}

impl SystemDef {
    /// Sample points, push the field through the closed-form
    /// transformation and evaluate every target and implied symmetry.
    pub fn verify_ground_truth(&self, count: usize, seed: u64) -> Result<OracleReport, OracleError> {
        // Keep points where the closed form exists and is invertible (A
        // needs a + b > 0; E degenerates as t → 0).
        let points = self.sample_points(count, seed, |z| self.ground_truth_bundle(z).is_ok())?;
        let n = self.dim();
        let phase = self.phase_layout();
        let specs = self
            .target_tags()
            .into_iter()
            .chain(self.implied_tags())
            .map(|t| SymmetrySpec::parse(t, self.kind(), n, &phase))
            .collect::<Result<Vec<_>, _>>()?;
        let mut batch = Vec::with_capacity(points.len());
        let mut max_err = 0.0f64;
        for z in &points {
            let bundle = self.ground_truth_bundle(z)?;
            let pushed = push(&self.eval(z)?, &bundle)?;
            let target = self.target_value(&bundle.z);
            for (a, b) in pushed.value.iter().zip(&target) {
                max_err = max_err.max((a - b).abs());
            }
            batch.push(TransformedPoint::Regular {
                z: bundle.z.clone(),
                sample: pushed,
            });
        }
        Ok(OracleReport {
            system: self.id,
            losses: loss_eval(&specs, &batch)?,
            max_value_error: max_err,
            points: points.len(),
        })
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Symmetry(#[from] SymmetryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Attach i.i.d. N(0, σ²) noise to every field component of every point.
/// Metric noise is drawn for the upper triangle and mirrored so the noisy
/// metric stays symmetric. Derivatives are never perturbed.
pub fn inject_noise(mut batch: SampleBatch, sigma: f64, seed: u64) -> Result<SampleBatch, SystemError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(SystemError::Noise(sigma));
    }
    if sigma == 0.0 {
        batch.noise = None;
        batch.sigma = 0.0;
        return Ok(batch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = batch
        .fields
        .iter()
        .map(|f| {
            let n = f.n;
            match f.kind {
                FieldKind::Vector => (0..n)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        sigma * e
                    })
                    .collect::<Vec<f64>>(),
                FieldKind::Metric => {
                    let mut e = vec![0.0; n * n];
                    for i in 0..n {
                        for j in i..n {
                            let u: f64 = StandardNormal.sample(&mut rng);
                            let v = sigma * u;
                            e[i * n + j] = v;
                            e[j * n + i] = v;
                        }
                    }
                    e
                }
            }
        })
        .collect();
    batch.noise = Some(noise);
    batch.sigma = sigma;
    Ok(batch)
}

/// Add a noise vector to the value of a field sample.
pub fn add_noise(sample: &FieldSample<f64>, noise: &[f64]) -> FieldSample<f64> {
    let mut s = sample.clone();
    for (v, e) in s.value.iter_mut().zip(noise) {
        *v += e;
    }
    s
}
