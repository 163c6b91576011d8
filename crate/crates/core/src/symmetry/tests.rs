use super::*;
use crate::jet::Jet2;
use proptest::prelude::*;

fn vec_sample(value: Vec<f64>, jac: Vec<f64>) -> FieldSample<f64> {
    FieldSample::vector(value, Some(jac))
}

fn spec(tag: &str, kind: FieldKind, n: usize) -> SymmetrySpec {
    SymmetrySpec::parse(tag, kind, n, &PhaseLayout::interleaved(n)).unwrap()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn comm(a: &SquareMatrix<f64>, b: &SquareMatrix<f64>) -> SquareMatrix<f64> {
    a.matmul(b).sub(&b.matmul(a))
}

/// Gullstrand–Painlevé metric with 2M = 1 built from jets.
fn gp_metric(z: &[f64]) -> FieldSample<f64> {
    let j = Jet2::seed_all(z);
    let r2 = j[1].mul(&j[1]).add(&j[2].mul(&j[2])).add(&j[3].mul(&j[3]));
    let r = r2.sqrt().unwrap();
    let inv_r = r.recip().unwrap();
    let k = inv_r.sqrt().unwrap().mul(&inv_r);
    let mut comps = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            comps.push(match (a, b) {
                (0, 0) => inv_r.scale(-1.0).add_scalar(1.0),
                (0, i) | (i, 0) => k.mul(&j[i]).scale(-1.0),
                (i, j2) if i == j2 => Jet2::constant(4, -1.0),
                _ => Jet2::constant(4, 0.0),
            });
        }
    }
    FieldSample::metric_from_jets(4, &comps)
}

#[test]
fn so2_generator() {
    let g = make_generators(Group::So2);
    assert_eq!(g.len(), 1);
    assert_eq!(g[0].k.as_slice(), &[0.0, 1.0, -1.0, 0.0]);
}

#[test]
fn lorentz_boost_and_rotation_shapes() {
    let g = make_generators(Group::So31);
    assert_eq!(g.len(), 6);
    let k1 = &g[0].k;
    assert_eq!(k1[(0, 1)], 1.0);
    assert_eq!(k1[(1, 0)], 1.0);
    assert_eq!(k1.transpose(), *k1);
    assert_eq!(k1.as_slice().iter().filter(|&&x| x != 0.0).count(), 2);
    for r in &g[3..] {
        assert_eq!(r.k.transpose(), r.k.scale(-1.0));
    }
}

#[test]
fn rotation_commutators() {
    let g = make_generators(Group::So3);
    assert_eq!(comm(&g[0].k, &g[1].k), g[2].k.scale(-1.0));
    assert_eq!(comm(&g[1].k, &g[2].k), g[0].k.scale(-1.0));
    assert_eq!(comm(&g[0].k, &g[2].k), g[1].k);
    for r in &g {
        for i in 0..4 {
            assert_eq!(r.k[(0, i)], 0.0);
            assert_eq!(r.k[(i, 0)], 0.0);
        }
    }
}

#[test]
fn tag_parsing_and_alpha() {
    let v2 = PhaseLayout::interleaved(2);
    let a = |t: &str, k, n| {
        SymmetrySpec::parse(t, k, n, &PhaseLayout::interleaved(n))
            .unwrap()
            .alpha()
    };
    assert_eq!(a("ham", FieldKind::Vector, 2), 0);
    assert_eq!(a("trans:0", FieldKind::Vector, 2), 0);
    assert_eq!(a("eqv:so2", FieldKind::Vector, 2), 1);
    assert_eq!(a("can:so2", FieldKind::Vector, 4), 1);
    assert_eq!(a("mod:2+2", FieldKind::Vector, 4), 0);
    assert_eq!(a("inv:so31", FieldKind::Metric, 4), -2);
    assert_eq!(a("trans:0", FieldKind::Metric, 4), -3);

    let err = |t: &str, k, n| SymmetrySpec::parse(t, k, n, &v2).unwrap_err();
    assert!(matches!(err("bogus", FieldKind::Vector, 2), SymmetryError::UnknownTag(_)));
    assert!(matches!(err("eqv:so7", FieldKind::Vector, 2), SymmetryError::UnknownGroup(_)));
    assert!(matches!(err("ham", FieldKind::Vector, 3), SymmetryError::OddDimension { .. }));
    assert!(matches!(err("flat:minkowski", FieldKind::Vector, 4), SymmetryError::WrongKind { .. }));
    assert!(matches!(err("trans:5", FieldKind::Vector, 2), SymmetryError::Shape { .. }));
    assert!(matches!(err("mod:1+2", FieldKind::Vector, 4), SymmetryError::Shape { .. }));
}

#[test]
fn modularity_mask_is_symmetric_binary() {
    let m = block_mask(&[2, 2]);
    assert_eq!(m.transpose(), m);
    assert!(m.as_slice().iter().all(|&x| x == 0.0 || x == 1.0));
    assert_eq!(m[(0, 1)], 0.0);
    assert_eq!(m[(0, 2)], 1.0);
}

#[test]
fn translation_examples() {
    // f = (p, 0) is independent of x
    let s = vec_sample(vec![0.7, 0.0], vec![0.0, 1.0, 0.0, 0.0]);
    assert_eq!(residual_translation(&s, &[0]), vec![0.0, 0.0]);
    // f = (z1², 0) at z1 = 0.4, axis 1
    let s = vec_sample(vec![0.16, 0.0], vec![0.0, 0.8, 0.0, 0.0]);
    assert_eq!(residual_translation(&s, &[1]), vec![0.8, 0.0]);
    let eta = FieldSample::metric(4, minkowski(4).into_vec(), Some(vec![0.0; 64]));
    assert_eq!(max_abs(&residual_translation(&eta, &[0, 1, 2, 3])), 0.0);
}

#[test]
fn lie_invariance_examples() {
    let so31 = make_generators(Group::So31);
    let z = [0.3, -1.2, 0.5, 2.0];
    let eta = FieldSample::metric(4, minkowski(4).into_vec(), Some(vec![0.0; 64]));
    assert!(max_abs(&residual_lie_invariance(&eta, &so31, &z)) < 1e-15);

    let so3 = make_generators(Group::So3);
    for z in [[0.5, 1.3, -2.0, 0.4], [2.0, -0.3, 0.8, 1.9]] {
        let g = gp_metric(&z);
        assert!(max_abs(&residual_lie_invariance(&g, &so3, &z)) < 1e-10);
    }

    // g depending on x only: g_00 = x², everything else Minkowski
    let x = 0.7;
    let mut value = minkowski(4).into_vec();
    value[0] = x * x;
    let mut d = vec![0.0; 64];
    d[1] = 2.0 * x; // ∂_x g_00
    let s = FieldSample::metric(4, value.clone(), Some(d.clone()));
    let z = [0.2, x, 0.0, 0.0];
    let k1 = &so31[..1];
    let r = residual_lie_invariance(&s, k1, &z);
    // manual: (∂g)·(K1 z) + K1ᵀ g + g K1
    let kz = k1[0].k.matvec(&z);
    let g = SquareMatrix::from_vec(4, value);
    let kg = k1[0].k.transpose().matmul(&g).add(&g.matmul(&k1[0].k));
    for i in 0..4 {
        for j in 0..4 {
            let dir: f64 = (0..4).map(|l| d[(i * 4 + j) * 4 + l] * kz[l]).sum();
            assert!((r[i * 4 + j] - dir - kg[(i, j)]).abs() < 1e-14);
        }
    }
    assert!(max_abs(&r) > 0.1);
}

#[test]
fn equivariance_examples() {
    let so2 = make_generators(Group::So2);
    let z = [0.4, -1.1];
    let osc = vec_sample(vec![z[1], -z[0]], vec![0.0, 1.0, -1.0, 0.0]);
    assert_eq!(residual_lie_equivariance(&osc, &so2, &z), vec![0.0, 0.0]);
    let radial = vec_sample(z.to_vec(), vec![1.0, 0.0, 0.0, 1.0]);
    assert_eq!(residual_lie_equivariance(&radial, &so2, &z), vec![0.0, 0.0]);
    // f = (x², 0): J K z − K f with K z = (p, −x), K f = (0, −x²)
    let (x, p) = (z[0], z[1]);
    let sq = vec_sample(vec![x * x, 0.0], vec![2.0 * x, 0.0, 0.0, 0.0]);
    let r = residual_lie_equivariance(&sq, &so2, &z);
    assert!((r[0] - 2.0 * x * p).abs() < 1e-15);
    assert!((r[1] - x * x).abs() < 1e-15);
}

fn kepler_target(z: &[f64]) -> FieldSample<f64> {
    let j = Jet2::seed_all(z);
    let r2 = j[0].mul(&j[0]).add(&j[2].mul(&j[2]));
    let r3 = r2.mul(&r2.sqrt().unwrap());
    let inv = r3.recip().unwrap();
    let comps = [
        j[1].clone(),
        j[0].mul(&inv).scale(-1.0),
        j[3].clone(),
        j[2].mul(&inv).scale(-1.0),
    ];
    FieldSample::vector_from_jets(&comps)
}

#[test]
fn canonical_examples() {
    use rand::{Rng, SeedableRng};
    let gens = make_generators(Group::CanonicalSo2);
    let phase = PhaseLayout::interleaved(4);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let r = residual_canonical(&kepler_target(&z), &gens, &z, &phase).unwrap();
        assert!(max_abs(&r) < 1e-10);
    }
    let z = [0.3, 0.5, -0.7, 1.1];
    let zero = vec_sample(vec![0.0; 4], vec![0.0; 16]);
    assert_eq!(max_abs(&residual_canonical(&zero, &gens, &z, &phase).unwrap()), 0.0);
    // f = (x, 0, y, 0)
    let mut jac = vec![0.0; 16];
    jac[0] = 1.0;
    jac[2 * 4 + 2] = 1.0;
    let f = vec_sample(vec![z[0], 0.0, z[2], 0.0], jac);
    let r = residual_canonical(&f, &gens, &z, &phase).unwrap();
    // rotating x and p together maps (x, 0) to (Rx, 0): this field is
    // canonically equivariant, so the residual is zero
    assert!(max_abs(&r) < 1e-15);
    let odd = FieldSample::vector(vec![0.0; 3], Some(vec![0.0; 9]));
    assert!(residual_canonical(&odd, &gens, &[0.0; 3], &phase).is_err());
}

#[test]
fn canonical_nonzero_for_non_equivariant_field() {
    let gens = make_generators(Group::CanonicalSo2);
    let phase = PhaseLayout::interleaved(4);
    let z = [0.3, 0.5, -0.7, 1.1];
    // f = (x², 0, 0, 0) is not rotation covariant
    let mut jac = vec![0.0; 16];
    jac[0] = 2.0 * z[0];
    let f = vec_sample(vec![z[0] * z[0], 0.0, 0.0, 0.0], jac);
    let r = residual_canonical(&f, &gens, &z, &phase).unwrap();
    assert!(max_abs(&r) > 0.1);
}

#[test]
fn hamiltonicity_examples() {
    let phase = PhaseLayout::interleaved(2);
    let osc = vec_sample(vec![0.3, -0.2], vec![0.0, 1.0, -1.0, 0.0]);
    let r = residual_hamiltonicity(&osc, &phase).unwrap();
    assert_eq!(r.as_slice(), &[0.0; 4]);
    // f = (x, 0): M J = [[0,0],[-1,0]]
    let f = vec_sample(vec![0.3, 0.0], vec![1.0, 0.0, 0.0, 0.0]);
    let r = residual_hamiltonicity(&f, &phase).unwrap();
    assert_eq!(r.as_slice(), &[0.0, 1.0, -1.0, 0.0]);
    let odd = FieldSample::vector(vec![0.0; 3], Some(vec![0.0; 9]));
    assert!(residual_hamiltonicity(&odd, &PhaseLayout::interleaved(3)).is_err());
}

#[test]
fn modularity_examples() {
    let mask = block_mask(&[2, 2]);
    let mut jac = vec![0.0; 16];
    for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (2, 3), (3, 2), (3, 3)] {
        jac[i * 4 + j] = 1.5;
    }
    let s = vec_sample(vec![0.0; 4], jac);
    assert_eq!(max_abs(residual_modularity(&s, &mask).unwrap().as_slice()), 0.0);
    let ones = vec_sample(vec![0.0; 4], vec![1.0; 16]);
    assert_eq!(residual_modularity(&ones, &mask).unwrap(), mask);
    assert!(residual_modularity(&ones, &block_mask(&[1, 1])).is_err());
}

#[test]
fn flat_examples() {
    let eta = minkowski(4).into_vec();
    let s = FieldSample::metric(4, eta.clone(), None);
    assert_eq!(max_abs(&residual_flat(&s, FlatTarget::Minkowski).unwrap()), 0.0);
    let two: Vec<f64> = eta.iter().map(|x| 2.0 * x).collect();
    let s2 = FieldSample::metric(4, two, None);
    assert_eq!(residual_flat(&s2, FlatTarget::Minkowski).unwrap(), eta);
    let sp = spec("flat:minkowski", FieldKind::Metric, 4);
    let report = loss_eval(
        &[sp],
        &[TransformedPoint::Regular {
            z: vec![0.0; 4],
            sample: s2,
        }],
    )
    .unwrap();
    assert!((report.total - 0.25).abs() < 1e-15);

    let gp = gp_metric(&[0.4, 1.5, -2.0, 0.3]);
    assert_eq!(max_abs(&residual_flat(&gp, FlatTarget::SpatialIdentity).unwrap()), 0.0);
    let v = vec_sample(vec![0.0; 4], vec![0.0; 16]);
    assert!(residual_flat(&v, FlatTarget::Minkowski).is_err());
}

#[test]
fn spatial_flat_loss_ignores_time_components() {
    // spatial block 2·(−δ): residual −δ, ratio 3 / 12 whatever g′₀₀ is
    let sp = spec("flat:spatial", FieldKind::Metric, 4);
    let loss = |g00: f64| {
        let mut g = minkowski(4).into_vec().iter().map(|x| 2.0 * x).collect::<Vec<_>>();
        g[0] = g00;
        g[1] = 0.5 * g00;
        g[4] = 0.5 * g00;
        let pt = TransformedPoint::Regular {
            z: vec![0.0; 4],
            sample: FieldSample::metric(4, g, None),
        };
        loss_eval(std::slice::from_ref(&sp), &[pt]).unwrap().total
    };
    for g00 in [1.0, 1e3, 1e6] {
        assert!((loss(g00) - 0.25).abs() < 1e-15, "{g00}");
    }
}

#[test]
fn loss_eval_basics() {
    let specs = [spec("ham", FieldKind::Vector, 2), spec("eqv:so2", FieldKind::Vector, 2)];
    let osc = |x: f64, p: f64| TransformedPoint::Regular {
        z: vec![x, p],
        sample: vec_sample(vec![p, -x], vec![0.0, 1.0, -1.0, 0.0]),
    };
    let r = loss_eval(&specs, &[osc(0.1, 0.2), osc(-1.0, 0.5)]).unwrap();
    assert_eq!(r.total, 0.0);
    assert_eq!(r.batch_size, 2);
    assert_eq!(r.parts[0].denominator, 1.0);
    assert!(matches!(loss_eval(&specs, &[]), Err(SymmetryError::EmptyBatch)));

    let r = loss_eval(&specs, &[osc(0.1, 0.2), TransformedPoint::Singular]).unwrap();
    assert_eq!(r.singular, 1);
    assert!((r.get("ham").unwrap() - SINGULAR_PENALTY / 2.0).abs() < 1e-6);
    let sum: f64 = r.parts.iter().map(|p| p.loss).sum();
    assert!((r.total - sum).abs() <= 1e-12 * sum);
}

#[test]
fn missing_derivatives_are_reported() {
    let sp = spec("ham", FieldKind::Vector, 2);
    let s = FieldSample::vector(vec![1.0, 0.0], None);
    assert!(matches!(
        sp.residual(&s, &[0.0, 0.0]),
        Err(SymmetryError::MissingDerivative(_))
    ));
}

fn arb_vec_sample(n: usize) -> impl Strategy<Value = (Vec<f64>, FieldSample<f64>)> {
    (
        prop::collection::vec(-2.0..2.0f64, n),
        prop::collection::vec(-2.0..2.0f64, n),
        prop::collection::vec(-2.0..2.0f64, n * n),
    )
        .prop_map(|(z, v, d)| (z, FieldSample::vector(v, Some(d))))
}

fn arb_metric_sample() -> impl Strategy<Value = (Vec<f64>, FieldSample<f64>)> {
    (
        prop::collection::vec(-2.0..2.0f64, 4),
        prop::collection::vec(-2.0..2.0f64, 16),
        prop::collection::vec(-2.0..2.0f64, 64),
    )
        .prop_map(|(z, v, d)| {
            // symmetrize value and derivative
            let mut v2 = v.clone();
            let mut d2 = d.clone();
            for i in 0..4 {
                for j in 0..4 {
                    v2[i * 4 + j] = 0.5 * (v[i * 4 + j] + v[j * 4 + i]);
                    for k in 0..4 {
                        d2[(i * 4 + j) * 4 + k] =
                            0.5 * (d[(i * 4 + j) * 4 + k] + d[(j * 4 + i) * 4 + k]);
                    }
                }
            }
            (z, FieldSample::metric(4, v2, Some(d2)))
        })
}

fn scaled(z: &[f64], s: &FieldSample<f64>, a: f64, m_minus_n: i32) -> (Vec<f64>, FieldSample<f64>) {
    let vs = a.powi(m_minus_n);
    let ds = a.powi(m_minus_n - 1);
    (
        z.iter().map(|x| a * x).collect(),
        FieldSample {
            kind: s.kind,
            n: s.n,
            value: s.value.iter().map(|x| vs * x).collect(),
            deriv: s.deriv.as_ref().map(|d| d.iter().map(|x| ds * x).collect()),
        },
    )
}

fn batch_loss(specs: &[SymmetrySpec], pts: &[(Vec<f64>, FieldSample<f64>)]) -> Vec<f64> {
    let batch: Vec<_> = pts
        .iter()
        .map(|(z, s)| TransformedPoint::Regular {
            z: z.clone(),
            sample: s.clone(),
        })
        .collect();
    loss_eval(specs, &batch)
        .unwrap()
        .parts
        .iter()
        .map(|p| p.loss)
        .collect()
}

fn add_samples(a: &FieldSample<f64>, b: &FieldSample<f64>) -> FieldSample<f64> {
    FieldSample {
        kind: a.kind,
        n: a.n,
        value: a.value.iter().zip(&b.value).map(|(x, y)| x + y).collect(),
        deriv: Some(
            a.deriv
                .as_ref()
                .unwrap()
                .iter()
                .zip(b.deriv.as_ref().unwrap())
                .map(|(x, y)| x + y)
                .collect(),
        ),
    }
}

fn vector_specs_4() -> Vec<SymmetrySpec> {
    ["ham", "can:so2", "mod:2+2", "trans:0,2"]
        .iter()
        .map(|t| spec(t, FieldKind::Vector, 4))
        .collect()
}

fn metric_specs() -> Vec<SymmetrySpec> {
    ["inv:so31", "inv:so3", "trans:0"]
        .iter()
        .map(|t| spec(t, FieldKind::Metric, 4))
        .collect()
}

proptest! {
    #[test]
    fn vector_losses_are_scale_invariant(
        pts in prop::collection::vec(arb_vec_sample(4), 3..6),
        ai in 0usize..3,
    ) {
        let a = [0.5, 2.0, 10.0][ai];
        let specs = vector_specs_4();
        let base = batch_loss(&specs, &pts);
        let sc: Vec<_> = pts.iter().map(|(z, s)| scaled(z, s, a, 1)).collect();
        for (x, y) in base.iter().zip(batch_loss(&specs, &sc)) {
            prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1e-300));
        }
        let so2 = [spec("eqv:so2", FieldKind::Vector, 2), spec("ham", FieldKind::Vector, 2)];
        let pts2: Vec<_> = pts.iter().map(|(z, s)| {
            (z[..2].to_vec(), FieldSample::vector(s.value[..2].to_vec(),
                Some(vec![s.deriv.as_ref().unwrap()[0], s.deriv.as_ref().unwrap()[1],
                          s.deriv.as_ref().unwrap()[4], s.deriv.as_ref().unwrap()[5]])))
        }).collect();
        let base = batch_loss(&so2, &pts2);
        let sc: Vec<_> = pts2.iter().map(|(z, s)| scaled(z, s, a, 1)).collect();
        for (x, y) in base.iter().zip(batch_loss(&so2, &sc)) {
            prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn metric_losses_are_scale_invariant(
        pts in prop::collection::vec(arb_metric_sample(), 3..6),
        ai in 0usize..3,
    ) {
        let a = [0.5, 2.0, 10.0][ai];
        let specs = metric_specs();
        let base = batch_loss(&specs, &pts);
        let sc: Vec<_> = pts.iter().map(|(z, s)| scaled(z, s, a, -2)).collect();
        for (x, y) in base.iter().zip(batch_loss(&specs, &sc)) {
            prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn residuals_are_linear_in_the_field(
        (z, s1) in arb_vec_sample(4),
        (_, s2) in arb_vec_sample(4),
        (zm, g1) in arb_metric_sample(),
        (_, g2) in arb_metric_sample(),
    ) {
        for sp in vector_specs_4() {
            let r1 = sp.residual(&s1, &z).unwrap();
            let r2 = sp.residual(&s2, &z).unwrap();
            let r12 = sp.residual(&add_samples(&s1, &s2), &z).unwrap();
            for i in 0..r1.len() {
                prop_assert!((r12[i] - r1[i] - r2[i]).abs() < 1e-10);
            }
        }
        for sp in metric_specs() {
            let r1 = sp.residual(&g1, &zm).unwrap();
            let r2 = sp.residual(&g2, &zm).unwrap();
            let r12 = sp.residual(&add_samples(&g1, &g2), &zm).unwrap();
            for i in 0..r1.len() {
                prop_assert!((r12[i] - r1[i] - r2[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn hamiltonicity_residual_is_antisymmetric((_, s) in arb_vec_sample(4)) {
        let r = residual_hamiltonicity(&s, &PhaseLayout::interleaved(4)).unwrap();
        let t = r.transpose();
        for i in 0..16 {
            prop_assert!((r.as_slice()[i] + t.as_slice()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_hamiltonians_have_zero_residual(
        a in prop::collection::vec(-2.0..2.0f64, 16),
        z in prop::collection::vec(-2.0..2.0f64, 4),
    ) {
        // H = zᵀ A z with A symmetric; f = M ∇H, J = M (A + Aᵀ)
        let a = SquareMatrix::from_vec(4, a);
        let sym = a.add(&a.transpose());
        let phase = PhaseLayout::interleaved(4);
        let m = phase.symplectic();
        let jac = m.matmul(&sym);
        let f = jac.matvec(&z);
        let s = FieldSample::vector(f, Some(jac.into_vec()));
        let r = residual_hamiltonicity(&s, &phase).unwrap();
        prop_assert!(r.frobenius_sq().sqrt() < 1e-12);
    }
}

#[test]
fn loss_coefficients_match_finite_differences() {
    // ℓ(N, Q) for an α = 1 spec; perturb one point's residual² and norm
    let sp = spec("eqv:so2", FieldKind::Vector, 2);
    let terms = [(0.3, 1.2), (0.5, 0.7), (0.1, 2.0)];
    let total = |t: &[(f64, f64)]| {
        let mut acc = LossAccumulator::new(std::slice::from_ref(&sp), 10.0);
        for x in t {
            acc.add_regular(std::slice::from_ref(x));
        }
        acc.add_singular();
        acc.report().unwrap().total
    };
    let mut acc = LossAccumulator::new(std::slice::from_ref(&sp), 10.0);
    for x in &terms {
        acc.add_regular(std::slice::from_ref(x));
    }
    acc.add_singular();
    let c = acc.coeffs()[0];
    let h = 1e-6;
    let mut tp = terms;
    tp[1].0 += h;
    let mut tm = terms;
    tm[1].0 -= h;
    let fd_r = (total(&tp) - total(&tm)) / (2.0 * h);
    let mut tp = terms;
    tp[1].1 += h;
    let mut tm = terms;
    tm[1].1 -= h;
    let fd_q = (total(&tp) - total(&tm)) / (2.0 * h);
    assert!((c.d_residual - fd_r).abs() < 1e-6 * fd_r.abs());
    assert!((c.d_norm - fd_q).abs() < 1e-6 * fd_q.abs().max(1.0));
}
