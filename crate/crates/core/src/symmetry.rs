//! Generalized-symmetry residuals and scale-invariant symmetry losses.
//!
//! Every symmetry is a linear operator L̂ acting on a transformed field
//! sample; the loss for one symmetry is
//!
//! ```text
//! ℓ = ⟨|L̂ T|²⟩ / ⟨|z|²⟩^α,   α = m − n + s
//! ```
//!
//! for a tensor with `m` upper and `n` lower indices and an operator that
//! scales as `a^s` under z → a z. The two "flat" targets (Minkowski metric,
//! flat spatial metric) use ⟨||T − target||²⟩ / ⟨||T||²⟩ instead.

use std::fmt;

use thiserror::Error;

use crate::real::{self, Real};
use crate::tensor_calc::{FieldKind, FieldSample, SquareMatrix};

/// Default loss contribution of a point whose Jacobian is non-invertible.
pub const SINGULAR_PENALTY: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymmetryError {
    #[error("unknown symmetry tag `{0}`")]
    UnknownTag(String),
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
    #[error("`{tag}` requires an even dimension, got {n}")]
    OddDimension { tag: String, n: usize },
    #[error("`{tag}` does not apply to a {kind} field")]
    WrongKind { tag: String, kind: &'static str },
    #[error("`{tag}`: {msg}")]
    Shape { tag: String, msg: String },
    #[error("`{0}` needs field derivatives but the sample has none")]
    MissingDerivative(String),
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    So2,
    So3,
    So31,
    CanonicalSo2,
}

impl Group {
    pub fn parse(s: &str) -> Result<Self, SymmetryError> {
        match s {
            "so2" => Ok(Group::So2),
            "so3" => Ok(Group::So3),
            "so31" => Ok(Group::So31),
            "canonical-so2" => Ok(Group::CanonicalSo2),
            other => Err(SymmetryError::UnknownGroup(other.to_string())),
        }
    }
}

/// A Lie algebra generator K acting linearly on coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub name: String,
    pub k: SquareMatrix<f64>,
}

impl Generator {
    fn from_entries(name: &str, n: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut k = SquareMatrix::zeros(n);
        for &(i, j, v) in entries {
            k[(i, j)] = v;
        }
        Generator {
            name: name.to_string(),
            k,
        }
    }
}

/// Generators of the supported groups.
///
/// The SO(3) generators are the spatial rotations of 4-vectors (t, x, y, z)
/// with zero time row and column; with this sign convention
/// [K₄, K₅] = −K₆ for the rotations in the (x,y), (x,z), (y,z) planes.
/// SO(3,1) lists the three boosts first, then the same three rotations.
/// Canonical SO(2) returns the 2×2 rotation generator that acts on the
/// position block and the momentum block of a phase-space layout.
pub fn make_generators(group: Group) -> Vec<Generator> {
    let rot = |name: &str, a: usize, b: usize| {
        Generator::from_entries(name, 4, &[(a, b, 1.0), (b, a, -1.0)])
    };
    let boost = |name: &str, a: usize| Generator::from_entries(name, 4, &[(0, a, 1.0), (a, 0, 1.0)]);
    match group {
        Group::So2 => vec![Generator::from_entries(
            "rot",
            2,
            &[(0, 1, 1.0), (1, 0, -1.0)],
        )],
        Group::CanonicalSo2 => vec![Generator::from_entries(
            "can-rot",
            2,
            &[(0, 1, 1.0), (1, 0, -1.0)],
        )],
        Group::So3 => vec![rot("rot-xy", 1, 2), rot("rot-xz", 1, 3), rot("rot-yz", 2, 3)],
        Group::So31 => vec![
            boost("boost-x", 1),
            boost("boost-y", 2),
            boost("boost-z", 3),
            rot("rot-xy", 1, 2),
            rot("rot-xz", 1, 3),
            rot("rot-yz", 2, 3),
        ],
    }
}

/// Pairing of position and momentum coordinates in phase space.
///
/// Systems in this crate order phase-space coordinates as (x₁, p₁, x₂, p₂),
/// so the default pairing is interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseLayout {
    pub pairs: Vec<(usize, usize)>,
}

impl PhaseLayout {
    pub fn interleaved(n: usize) -> Self {
        PhaseLayout {
            pairs: (0..n / 2).map(|i| (2 * i, 2 * i + 1)).collect(),
        }
    }

    pub fn blocked(n: usize) -> Self {
        let d = n / 2;
        PhaseLayout {
            pairs: (0..d).map(|i| (i, d + i)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.pairs.len()
    }

    /// The symplectic matrix M with M[x_i][p_i] = 1, M[p_i][x_i] = −1.
    pub fn symplectic(&self) -> SquareMatrix<f64> {
        let mut m = SquareMatrix::zeros(self.dim());
        for &(x, p) in &self.pairs {
            m[(x, p)] = 1.0;
            m[(p, x)] = -1.0;
        }
        m
    }

    pub fn positions(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn momenta(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SymmetryKind {
    Translation { axes: Vec<usize> },
    LieInvariance(Group),
    LieEquivariance(Group),
    CanonicalEquivariance(Group),
    Hamiltonicity,
    Modularity { blocks: Vec<usize> },
    MinkowskiFlat,
    SpatialFlat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlatTarget {
    Minkowski,
    SpatialIdentity,
}

/// One symmetry to enforce, resolved against a field kind and dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetrySpec {
    pub tag: String,
    pub kind: SymmetryKind,
    pub generators: Vec<Generator>,
    /// 1 marks a forbidden coupling (modularity only).
    pub mask: Option<SquareMatrix<f64>>,
    pub phase: PhaseLayout,
    /// Upper and lower tensor ranks (m, n) of the field.
    pub variance: (i32, i32),
    /// Scaling power of the operator under z → a z.
    pub op_scale: i32,
}

impl fmt::Display for SymmetrySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag)
    }
}

impl SymmetrySpec {
    /// Parse a config tag for a field of the given kind and dimension.
    pub fn parse(
        tag: &str,
        field: FieldKind,
        n: usize,
        phase: &PhaseLayout,
    ) -> Result<Self, SymmetryError> {
        let (head, arg) = match tag.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (tag, None),
        };
        let variance = match field {
            FieldKind::Vector => (1, 0),
            FieldKind::Metric => (0, 2),
        };
        let wrong_kind = || SymmetryError::WrongKind {
            tag: tag.to_string(),
            kind: field.name(),
        };
        let shape = |msg: String| SymmetryError::Shape {
            tag: tag.to_string(),
            msg,
        };
        let group_dim_check = |g: Group| -> Result<(), SymmetryError> {
            let need = match g {
                Group::So2 => 2,
                Group::So3 | Group::So31 => 4,
                Group::CanonicalSo2 => 4,
            };
            if need != n {
                return Err(shape(format!("group acts on dimension {need}, field has {n}")));
            }
            Ok(())
        };

        let (kind, op_scale) = match (head, arg) {
            ("trans", Some(a)) => {
                let axes = a
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| SymmetryError::UnknownTag(tag.to_string()))?;
                if axes.is_empty() || axes.iter().any(|&x| x >= n) {
                    return Err(shape(format!("axes out of range for dimension {n}")));
                }
                (SymmetryKind::Translation { axes }, -1)
            }
            ("inv", Some(g)) => {
                let g = Group::parse(g)?;
                group_dim_check(g)?;
                (SymmetryKind::LieInvariance(g), 0)
            }
            ("eqv", Some(g)) => {
                let g = Group::parse(g)?;
                if field != FieldKind::Vector {
                    return Err(wrong_kind());
                }
                group_dim_check(g)?;
                (SymmetryKind::LieEquivariance(g), 0)
            }
            ("can", Some(g)) => {
                let g = match g {
                    "so2" | "canonical-so2" => Group::CanonicalSo2,
                    other => return Err(SymmetryError::UnknownGroup(other.to_string())),
                };
                if field != FieldKind::Vector {
                    return Err(wrong_kind());
                }
                if n % 2 != 0 {
                    return Err(SymmetryError::OddDimension {
                        tag: tag.to_string(),
                        n,
                    });
                }
                group_dim_check(g)?;
                (SymmetryKind::CanonicalEquivariance(g), 0)
            }
            ("ham", None) => {
                if field != FieldKind::Vector {
                    return Err(wrong_kind());
                }
                if n % 2 != 0 {
                    return Err(SymmetryError::OddDimension {
                        tag: tag.to_string(),
                        n,
                    });
                }
                (SymmetryKind::Hamiltonicity, -1)
            }
            ("mod", Some(b)) => {
                if field != FieldKind::Vector {
                    return Err(wrong_kind());
                }
                let blocks = b
                    .split('+')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| SymmetryError::UnknownTag(tag.to_string()))?;
                if blocks.iter().sum::<usize>() != n || blocks.contains(&0) {
                    return Err(shape(format!("block sizes must be positive and sum to {n}")));
                }
                (SymmetryKind::Modularity { blocks }, -1)
            }
            ("flat", Some("minkowski")) => {
                if field != FieldKind::Metric || n != 4 {
                    return Err(wrong_kind());
                }
                (SymmetryKind::MinkowskiFlat, 0)
            }
            ("flat", Some("spatial")) => {
                if field != FieldKind::Metric || n != 4 {
                    return Err(wrong_kind());
                }
                (SymmetryKind::SpatialFlat, 0)
            }
            _ => return Err(SymmetryError::UnknownTag(tag.to_string())),
        };

        let generators = match &kind {
            SymmetryKind::LieInvariance(g)
            | SymmetryKind::LieEquivariance(g)
            | SymmetryKind::CanonicalEquivariance(g) => make_generators(*g),
            _ => Vec::new(),
        };
        let mask = match &kind {
            SymmetryKind::Modularity { blocks } => Some(block_mask(blocks)),
            _ => None,
        };
        if matches!(
            kind,
            SymmetryKind::Hamiltonicity | SymmetryKind::CanonicalEquivariance(_)
        ) && phase.dim() != n
        {
            return Err(shape(format!(
                "phase layout covers {} coordinates, field has {n}",
                phase.dim()
            )));
        }
        Ok(SymmetrySpec {
            tag: tag.to_string(),
            kind,
            generators,
            mask,
            phase: phase.clone(),
            variance,
            op_scale,
        })
    }

    /// Scale exponent α = m − n + s.
    pub fn alpha(&self) -> i32 {
        self.variance.0 - self.variance.1 + self.op_scale
    }

    pub fn is_flat(&self) -> bool {
        matches!(
            self.kind,
            SymmetryKind::MinkowskiFlat | SymmetryKind::SpatialFlat
        )
    }

    /// Whether the residual involves first derivatives of the field (and
    /// hence second derivatives of the transformation).
    pub fn needs_derivatives(&self) -> bool {
        !self.is_flat()
    }

    /// Residual array of this symmetry on a transformed sample at `z`.
    pub fn residual<S: Real>(
        &self,
        s: &FieldSample<S>,
        z: &[S],
    ) -> Result<Vec<S>, SymmetryError> {
        if self.needs_derivatives() && s.deriv.is_none() {
            return Err(SymmetryError::MissingDerivative(self.tag.clone()));
        }
        let vector_only = || -> Result<(), SymmetryError> {
            if s.kind != FieldKind::Vector {
                Err(SymmetryError::WrongKind {
                    tag: self.tag.clone(),
                    kind: s.kind.name(),
                })
            } else {
                Ok(())
            }
        };
        match &self.kind {
            SymmetryKind::Translation { axes } => Ok(residual_translation(s, axes)),
            SymmetryKind::LieInvariance(_) => Ok(residual_lie_invariance(s, &self.generators, z)),
            SymmetryKind::LieEquivariance(_) => {
                vector_only()?;
                Ok(residual_lie_equivariance(s, &self.generators, z))
            }
            SymmetryKind::CanonicalEquivariance(_) => {
                vector_only()?;
                residual_canonical(s, &self.generators, z, &self.phase)
            }
            SymmetryKind::Hamiltonicity => {
                vector_only()?;
                residual_hamiltonicity(s, &self.phase).map(SquareMatrix::into_vec)
            }
            SymmetryKind::Modularity { .. } => {
                vector_only()?;
                let mask = self.mask.as_ref().expect("modularity spec has a mask");
                residual_modularity(s, mask).map(SquareMatrix::into_vec)
            }
            SymmetryKind::MinkowskiFlat => residual_flat(s, FlatTarget::Minkowski),
            SymmetryKind::SpatialFlat => residual_flat(s, FlatTarget::SpatialIdentity),
        }
    }

    /// Per-point (squared residual norm, normalization term).
    ///
    /// The normalization term is |z|² for PDE kinds and ||T||² for the flat
    /// kinds, taken over the same components as the residual; the batch
    /// loss divides the numerator mean by the normalization mean raised to
    /// [`SymmetrySpec::norm_power`].
    pub fn point_terms<S: Real>(
        &self,
        s: &FieldSample<S>,
        z: &[S],
    ) -> Result<(S, S), SymmetryError> {
        let r = self.residual(s, z)?;
        let norm = match self.kind {
            // the full norm would let g′₀₀ → ∞ shrink the ratio without
            // flattening anything
            SymmetryKind::SpatialFlat => {
                let n = s.n;
                (1..n)
                    .flat_map(|i| (1..n).map(move |j| i * n + j))
                    .fold(S::zero(), |acc, e| acc + s.value[e] * s.value[e])
            }
            _ if self.is_flat() => real::sum_sq(&s.value),
            _ => real::sum_sq(z),
        };
        Ok((real::sum_sq(&r), norm))
    }

    /// Power applied to the mean normalization term.
    pub fn norm_power(&self) -> i32 {
        if self.is_flat() {
            1
        } else {
            self.alpha()
        }
    }
}

/// Mask with 1 outside the diagonal blocks of the given sizes.
pub fn block_mask(blocks: &[usize]) -> SquareMatrix<f64> {
    let n: usize = blocks.iter().sum();
    let mut label = Vec::with_capacity(n);
    for (b, &size) in blocks.iter().enumerate() {
        label.extend(std::iter::repeat(b).take(size));
    }
    SquareMatrix::from_fn(n, |i, j| if label[i] == label[j] { 0.0 } else { 1.0 })
}

fn deriv<S: Real>(s: &FieldSample<S>) -> &[S] {
    s.deriv.as_deref().expect("derivatives checked by caller")
}

/// ∂_a T for each listed axis a.
pub fn residual_translation<S: Real>(s: &FieldSample<S>, axes: &[usize]) -> Vec<S> {
    let n = s.n;
    let d = deriv(s);
    let comps = d.len() / n;
    let mut out = Vec::with_capacity(comps * axes.len());
    for &a in axes {
        for c in 0..comps {
            out.push(d[c * n + a]);
        }
    }
    out
}

/// ∂_a g_ij restricted to spatial i, j ≥ 1.
pub fn residual_translation_spatial<S: Real>(s: &FieldSample<S>, axes: &[usize]) -> Vec<S> {
    let n = s.n;
    let d = deriv(s);
    let mut out = Vec::new();
    for &a in axes {
        for i in 1..n {
            for j in 1..n {
                out.push(d[(i * n + j) * n + a]);
            }
        }
    }
    out
}

fn k_times<S: Real>(k: &SquareMatrix<f64>, v: &[S]) -> Vec<S> {
    let n = k.dim();
    (0..n)
        .map(|i| {
            real::sum((0..n).filter(|&j| k[(i, j)] != 0.0).map(|j| v[j].scale(k[(i, j)])))
        })
        .collect()
}

/// Directional derivative of every component along K z.
fn directional<S: Real>(s: &FieldSample<S>, dir: &[S]) -> Vec<S> {
    let n = s.n;
    let d = deriv(s);
    let comps = d.len() / n;
    (0..comps)
        .map(|c| real::sum((0..n).map(|l| d[c * n + l] * dir[l])))
        .collect()
}

/// Lie invariance residual per generator.
///
/// Vectors: the component functions are invariant, ∇f · K z.
/// Metrics: the Lie derivative along K z (Killing form),
/// ∇g · K z + Kᵀ g + g K, which vanishes for any isometry.
pub fn residual_lie_invariance<S: Real>(
    s: &FieldSample<S>,
    gens: &[Generator],
    z: &[S],
) -> Vec<S> {
    let n = s.n;
    let mut out = Vec::new();
    for g in gens {
        let kz = k_times(&g.k, z);
        let dir = directional(s, &kz);
        match s.kind {
            FieldKind::Vector => out.extend(dir),
            FieldKind::Metric => {
                for i in 0..n {
                    for j in 0..n {
                        let mut acc = dir[i * n + j];
                        for l in 0..n {
                            let kli = g.k[(l, i)];
                            if kli != 0.0 {
                                acc = acc + s.value[l * n + j].scale(kli);
                            }
                            let klj = g.k[(l, j)];
                            if klj != 0.0 {
                                acc = acc + s.value[i * n + l].scale(klj);
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    out
}

/// J K z − K f per generator.
pub fn residual_lie_equivariance<S: Real>(
    s: &FieldSample<S>,
    gens: &[Generator],
    z: &[S],
) -> Vec<S> {
    let mut out = Vec::new();
    for g in gens {
        let kz = k_times(&g.k, z);
        let jkz = directional(s, &kz);
        let kf = k_times(&g.k, &s.value);
        out.extend(jkz.into_iter().zip(kf).map(|(a, b)| a - b));
    }
    out
}

/// Canonical equivariance: positions transform with K, momenta with −Kᵀ.
///
/// Position rows: K x·∇ₓ f − Kᵀ p·∇ₚ f + Kᵀ fₓ.
/// Momentum rows: K x·∇ₓ f − Kᵀ p·∇ₚ f − K fₚ.
pub fn residual_canonical<S: Real>(
    s: &FieldSample<S>,
    gens: &[Generator],
    z: &[S],
    phase: &PhaseLayout,
) -> Result<Vec<S>, SymmetryError> {
    let n = s.n;
    if n % 2 != 0 {
        return Err(SymmetryError::OddDimension {
            tag: "can".into(),
            n,
        });
    }
    let xs = phase.positions();
    let ps = phase.momenta();
    let d = xs.len();
    let mut out = Vec::new();
    for g in gens {
        if g.k.dim() != d {
            return Err(SymmetryError::Shape {
                tag: "can".into(),
                msg: format!("generator is {}×{}, phase space has {d} pairs", g.k.dim(), g.k.dim()),
            });
        }
        let kt = g.k.transpose();
        let x: Vec<S> = xs.iter().map(|&i| z[i]).collect();
        let p: Vec<S> = ps.iter().map(|&i| z[i]).collect();
        let kx = k_times(&g.k, &x);
        let ktp = k_times(&kt, &p);
        // flow direction in full coordinates
        let mut dir = vec![S::zero(); n];
        for a in 0..d {
            dir[xs[a]] = kx[a];
            dir[ps[a]] = -ktp[a];
        }
        let trans = directional(s, &dir);
        let fx: Vec<S> = xs.iter().map(|&i| s.value[i]).collect();
        let fp: Vec<S> = ps.iter().map(|&i| s.value[i]).collect();
        let kt_fx = k_times(&kt, &fx);
        let k_fp = k_times(&g.k, &fp);
        for a in 0..d {
            out.push(trans[xs[a]] + kt_fx[a]);
        }
        for a in 0..d {
            out.push(trans[ps[a]] - k_fp[a]);
        }
    }
    Ok(out)
}

/// M J + Jᵀ M, zero exactly when M⁻¹ f is a gradient.
pub fn residual_hamiltonicity<S: Real>(
    s: &FieldSample<S>,
    phase: &PhaseLayout,
) -> Result<SquareMatrix<S>, SymmetryError> {
    let n = s.n;
    if n % 2 != 0 || phase.dim() != n {
        return Err(SymmetryError::OddDimension {
            tag: "ham".into(),
            n,
        });
    }
    let j = s
        .jacobian()
        .ok_or_else(|| SymmetryError::MissingDerivative("ham".into()))?;
    let m = phase.symplectic();
    // (M J)_ab = Σ_c M_ac J_cb; M has one nonzero per row.
    let mj = SquareMatrix::from_fn(n, |a, b| {
        real::sum((0..n).filter(|&c| m[(a, c)] != 0.0).map(|c| j[(c, b)].scale(m[(a, c)])))
    });
    // Jᵀ M = (Mᵀ J)ᵀ = −(M J)ᵀ since M is antisymmetric.
    Ok(mj.sub(&mj.transpose()))
}

/// Elementwise mask ∘ J.
pub fn residual_modularity<S: Real>(
    s: &FieldSample<S>,
    mask: &SquareMatrix<f64>,
) -> Result<SquareMatrix<S>, SymmetryError> {
    let n = s.n;
    if mask.dim() != n {
        return Err(SymmetryError::Shape {
            tag: "mod".into(),
            msg: format!("mask is {0}×{0}, field has {n}", mask.dim()),
        });
    }
    let j = s
        .jacobian()
        .ok_or_else(|| SymmetryError::MissingDerivative("mod".into()))?;
    Ok(SquareMatrix::from_fn(n, |a, b| {
        if mask[(a, b)] != 0.0 {
            j[(a, b)].scale(mask[(a, b)])
        } else {
            S::zero()
        }
    }))
}

pub fn minkowski(n: usize) -> SquareMatrix<f64> {
    SquareMatrix::from_fn(n, |i, j| match (i, j) {
        (0, 0) => 1.0,
        (i, j) if i == j => -1.0,
        _ => 0.0,
    })
}

/// g − η over all entries, or g_ab + δ_ab over the spatial block.
pub fn residual_flat<S: Real>(
    s: &FieldSample<S>,
    target: FlatTarget,
) -> Result<Vec<S>, SymmetryError> {
    if s.kind != FieldKind::Metric {
        return Err(SymmetryError::WrongKind {
            tag: "flat".into(),
            kind: s.kind.name(),
        });
    }
    let n = s.n;
    Ok(match target {
        FlatTarget::Minkowski => {
            let eta = minkowski(n);
            (0..n * n)
                .map(|e| s.value[e] - S::cst(eta.as_slice()[e]))
                .collect()
        }
        FlatTarget::SpatialIdentity => {
            let mut out = Vec::with_capacity((n - 1) * (n - 1));
            for i in 1..n {
                for j in 1..n {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    out.push(s.value[i * n + j] + S::cst(delta));
                }
            }
            out
        }
    })
}

/// One point of a transformed batch.
#[derive(Debug, Clone)]
pub enum TransformedPoint {
    Regular {
        z: Vec<f64>,
        sample: FieldSample<f64>,
    },
    /// The transformation was not invertible here.
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossPart {
    pub tag: String,
    pub loss: f64,
    pub numerator: f64,
    pub denominator: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub parts: Vec<LossPart>,
    pub total: f64,
    pub batch_size: usize,
    pub singular: usize,
}

impl LossReport {
    pub fn get(&self, tag: &str) -> Option<f64> {
        self.parts.iter().find(|p| p.tag == tag).map(|p| p.loss)
    }
}

/// Accumulates per-point terms into batch losses, and provides the
/// per-point chain-rule coefficients needed for gradients.
#[derive(Debug, Clone)]
pub struct LossAccumulator {
    powers: Vec<i32>,
    tags: Vec<String>,
    penalty: f64,
    num: Vec<f64>,
    norm: Vec<f64>,
    points: usize,
    regular: usize,
}

/// ∂ℓ/∂(residual²) and ∂ℓ/∂(normalization) for one spec, per regular point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermCoeffs {
    pub d_residual: f64,
    pub d_norm: f64,
}

impl LossAccumulator {
    pub fn new(specs: &[SymmetrySpec], penalty: f64) -> Self {
        LossAccumulator {
            powers: specs.iter().map(|s| s.norm_power()).collect(),
            tags: specs.iter().map(|s| s.tag.clone()).collect(),
            penalty,
            num: vec![0.0; specs.len()],
            norm: vec![0.0; specs.len()],
            points: 0,
            regular: 0,
        }
    }

    pub fn add_regular(&mut self, terms: &[(f64, f64)]) {
        for (i, &(r, q)) in terms.iter().enumerate() {
            self.num[i] += r;
            self.norm[i] += q;
        }
        self.points += 1;
        self.regular += 1;
    }

    pub fn add_singular(&mut self) {
        for v in &mut self.num {
            *v += self.penalty;
        }
        self.points += 1;
    }

    fn means(&self, i: usize) -> (f64, f64) {
        let num = self.num[i] / self.points as f64;
        let norm = if self.regular > 0 {
            self.norm[i] / self.regular as f64
        } else {
            1.0
        };
        (num, norm)
    }

    pub fn report(&self) -> Result<LossReport, SymmetryError> {
        if self.points == 0 {
            return Err(SymmetryError::EmptyBatch);
        }
        let parts: Vec<LossPart> = (0..self.tags.len())
            .map(|i| {
                let (num, norm) = self.means(i);
                let denominator = norm.powi(self.powers[i]);
                LossPart {
                    tag: self.tags[i].clone(),
                    loss: num / denominator,
                    numerator: num,
                    denominator,
                }
            })
            .collect();
        let total = parts.iter().map(|p| p.loss).sum();
        Ok(LossReport {
            parts,
            total,
            batch_size: self.points,
            singular: self.points - self.regular,
        })
    }

    /// Coefficients such that dℓ_total = Σ_points Σ_specs
    /// (d_residual · d r + d_norm · d q) over regular points.
    pub fn coeffs(&self) -> Vec<TermCoeffs> {
        (0..self.tags.len())
            .map(|i| {
                let (num, norm) = self.means(i);
                let beta = self.powers[i];
                let d_residual = norm.powi(-beta) / self.points as f64;
                let d_norm = if beta == 0 || self.regular == 0 {
                    0.0
                } else {
                    -(beta as f64) * num * norm.powi(-beta - 1) / self.regular as f64
                };
                TermCoeffs { d_residual, d_norm }
            })
            .collect()
    }
}

/// Batch loss of every spec over a transformed batch.
pub fn loss_eval(
    specs: &[SymmetrySpec],
    batch: &[TransformedPoint],
) -> Result<LossReport, SymmetryError> {
    loss_eval_with_penalty(specs, batch, SINGULAR_PENALTY)
}

pub fn loss_eval_with_penalty(
    specs: &[SymmetrySpec],
    batch: &[TransformedPoint],
    penalty: f64,
) -> Result<LossReport, SymmetryError> {
    if batch.is_empty() {
        return Err(SymmetryError::EmptyBatch);
    }
    let mut acc = LossAccumulator::new(specs, penalty);
    for p in batch {
        match p {
            TransformedPoint::Regular { z, sample } => {
                let terms = specs
                    .iter()
                    .map(|s| s.point_terms(sample, z))
                    .collect::<Result<Vec<_>, _>>()?;
                acc.add_regular(&terms);
            }
            TransformedPoint::Singular => acc.add_singular(),
        }
    }
    acc.report()
}

#[cfg(test)]
mod tests;
