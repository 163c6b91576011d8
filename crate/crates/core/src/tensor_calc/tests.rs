use super::*;
use crate::jet::Jet2;
use proptest::prelude::*;

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!(
            (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())),
            "entry {i}: {x} vs {y}"
        );
    }
}

fn linear_bundle(a: &SquareMatrix<f64>, z: &[f64]) -> JacobianBundle<f64> {
    let n = a.dim();
    JacobianBundle::new(
        a.matvec(z),
        a.clone(),
        Some(vec![SquareMatrix::zeros(n); n]),
    )
    .unwrap()
}

/// A smooth nonlinear test map with jets.
fn warp(z: &[Jet2<f64>]) -> Vec<Jet2<f64>> {
    let n = z.len();
    (0..n)
        .map(|i| {
            let next = &z[(i + 1) % n];
            let far = &z[(i + 2) % n];
            z[i].add(&next.mul(next).scale(0.15))
                .add(&z[i].mul(far).scale(0.1))
        })
        .collect()
}

fn warp_bundle(z: &[f64]) -> JacobianBundle<f64> {
    JacobianBundle::from_jets(&warp(&Jet2::seed_all(z)), true).unwrap()
}

fn test_vector_field(z: &[Jet2<f64>]) -> Vec<Jet2<f64>> {
    let n = z.len();
    (0..n)
        .map(|i| z[(i + 1) % n].mul(&z[i]).add(&z[(i + 3) % n].exp().scale(0.3)))
        .collect()
}

fn test_metric(z: &[Jet2<f64>]) -> Vec<Jet2<f64>> {
    let n = z.len();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let base = if i == j {
                Jet2::constant(n, if i == 0 { 2.0 } else { -1.5 })
            } else {
                Jet2::constant(n, 0.0)
            };
            let (a, b) = (i.min(j), i.max(j));
            out.push(base.add(&z[a].mul(&z[b]).scale(0.2)));
        }
    }
    out
}

#[test]
fn identity_bundle_leaves_samples_unchanged() {
    let z = [0.4, -1.2];
    let s = FieldSample::vector_from_jets(&test_vector_field(&Jet2::seed_all(&z)));
    let b = JacobianBundle::identity(z.to_vec());
    assert_eq!(push_vector(&s, &b).unwrap(), s);

    let z4 = [0.5, 0.1, -0.3, 0.9];
    let g = FieldSample::metric_from_jets(4, &test_metric(&Jet2::seed_all(&z4)));
    let out = push_metric(&g, &JacobianBundle::identity(z4.to_vec())).unwrap();
    assert_close(&out.value, &g.value, 1e-15);
    assert_close(out.deriv.as_ref().unwrap(), g.deriv.as_ref().unwrap(), 1e-15);
}

#[test]
fn oscillator_under_diagonal_scaling() {
    // f(x, p) = (p, -x), J = [[0, 1], [-1, 0]], W = diag(2, 1)
    let (x, p) = (0.7, -0.4);
    let s = FieldSample::vector(vec![p, -x], Some(vec![0.0, 1.0, -1.0, 0.0]));
    let w = SquareMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 1.0]]);
    let out = push_vector(&s, &linear_bundle(&w, &[x, p])).unwrap();
    assert_close(&out.value, &[2.0 * p, -x], 1e-15);
    assert_close(out.deriv.as_ref().unwrap(), &[0.0, 2.0, -0.5, 0.0], 1e-15);
}

#[test]
fn one_dimensional_quadratic_map_constant_field() {
    // z' = z + z², f = 1: f'(z') = (1 + 2z), so df'/dz' = 2 / (1 + 2z).
    let bundle_at = |z: f64| {
        let j = Jet2::seed(1, 0, z);
        JacobianBundle::from_jets(&[j.add(&j.mul(&j))], true).unwrap()
    };
    let s = FieldSample::vector(vec![1.0], Some(vec![0.0]));
    let b = bundle_at(1.0);
    assert_eq!(b.z, vec![2.0]);
    assert_eq!(b.w[(0, 0)], 3.0);
    assert_eq!(b.dw.as_ref().unwrap()[0][(0, 0)], 2.0);
    let out = push_vector(&s, &b).unwrap();
    let h = 1e-5;
    let (bp, bm) = (bundle_at(1.0 + h), bundle_at(1.0 - h));
    let fp = push_vector(&s, &bp).unwrap().value[0];
    let fm = push_vector(&s, &bm).unwrap().value[0];
    let fd = (fp - fm) / (bp.z[0] - bm.z[0]);
    assert!((out.deriv.unwrap()[0] - fd).abs() < 1e-8);
    assert!((fd - 2.0 / 3.0).abs() < 1e-8);
}

#[test]
fn minkowski_under_uniform_scaling() {
    let eta = SquareMatrix::from_fn(4, |i, j| match (i, j) {
        (0, 0) => 1.0,
        (i, j) if i == j => -1.0,
        _ => 0.0,
    });
    let s = FieldSample::metric(4, eta.as_slice().to_vec(), None);
    let w = SquareMatrix::<f64>::identity(4).scale(2.0);
    let b = JacobianBundle::new(vec![0.0; 4], w, None).unwrap();
    let out = push_metric(&s, &b).unwrap();
    assert_close(&out.value, eta.scale(0.25).as_slice(), 1e-15);
}

#[test]
fn small_inverses() {
    let (inv, d) = SquareMatrix::<f64>::identity(3).inverse_and_det().unwrap();
    assert_eq!(inv, SquareMatrix::identity(3));
    assert_eq!(d, 1.0);
    let a = SquareMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 4.0]]);
    let (inv, d) = a.inverse_and_det().unwrap();
    assert_close(inv.as_slice(), &[0.5, 0.0, 0.0, 0.25], 1e-15);
    assert_eq!(d, 8.0);
    let sing = SquareMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
    assert!(matches!(
        mat_inverse(&sing),
        Err(TensorError::SingularMatrix { .. })
    ));
    assert_eq!(det(&sing).unwrap(), 0.0);
    // permutation needs a pivot swap and flips the sign
    let p = SquareMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
    assert_eq!(p.det().unwrap(), -1.0);
}

#[test]
fn singular_bundle_is_rejected() {
    let w = SquareMatrix::from_rows(&[&[1e-5, 0.0], &[0.0, 1e-4]]);
    assert!(matches!(
        JacobianBundle::new(vec![0.0, 0.0], w, None),
        Err(TensorError::SingularJacobian { .. })
    ));
}

#[test]
fn wrong_kind_and_missing_second_order() {
    let s = FieldSample::vector(vec![1.0, 0.0], Some(vec![0.0; 4]));
    let b = JacobianBundle::new(vec![0.0; 2], SquareMatrix::identity(2), None).unwrap();
    assert_eq!(push_vector(&s, &b), Err(TensorError::MissingSecondOrder));
    assert!(matches!(
        push_metric(&s, &b),
        Err(TensorError::WrongKind { .. })
    ));
}

#[test]
fn bundle_invariants_on_warp() {
    let z = [0.3, -0.8, 1.1, 0.2];
    let b = warp_bundle(&z);
    let prod = b.w.matmul(&b.w_inv).sub(&SquareMatrix::identity(4));
    assert!(prod.frobenius_sq().sqrt() < 1e-10);
    let dw = b.dw.as_ref().unwrap();
    for k in 0..4 {
        for i in 0..4 {
            for j in 0..4 {
                assert!((dw[k][(i, j)] - dw[j][(i, k)]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn round_trip_through_inverse_bundle() {
    let z = [0.3, -0.8, 1.1, 0.2];
    let b = warp_bundle(&z);
    let inv = b.inverse(z.to_vec()).unwrap();

    let v = FieldSample::vector_from_jets(&test_vector_field(&Jet2::seed_all(&z)));
    let back = push_vector(&push_vector(&v, &b).unwrap(), &inv).unwrap();
    assert_close(&back.value, &v.value, 1e-9);
    assert_close(back.deriv.as_ref().unwrap(), v.deriv.as_ref().unwrap(), 1e-9);

    let g = FieldSample::metric_from_jets(4, &test_metric(&Jet2::seed_all(&z)));
    let back = push_metric(&push_metric(&g, &b).unwrap(), &inv).unwrap();
    assert_close(&back.value, &g.value, 1e-9);
    assert_close(back.deriv.as_ref().unwrap(), g.deriv.as_ref().unwrap(), 1e-9);
}

/// Central differences of the pushed field along z′_k, taken by displacing
/// the base point by ±h W⁻¹ e_k (second-order accurate).
fn fd_transformed_deriv(
    z: &[f64],
    sample_at: &dyn Fn(&[f64]) -> FieldSample<f64>,
    h: f64,
) -> Vec<f64> {
    let n = z.len();
    let b = warp_bundle(z);
    let comps = sample_at(z).value.len();
    let mut out = vec![0.0; comps * n];
    for k in 0..n {
        let dir: Vec<f64> = (0..n).map(|i| b.w_inv[(i, k)]).collect();
        let eval = |sgn: f64| {
            let zz: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + sgn * h * d).collect();
            let bb = warp_bundle(&zz);
            (push(&sample_at(&zz).without_deriv(), &bb).unwrap().value, bb.z)
        };
        let (vp, zp) = eval(1.0);
        let (vm, zm) = eval(-1.0);
        let dz = zp[k] - zm[k];
        for c in 0..comps {
            out[c * n + k] = (vp[c] - vm[c]) / dz;
        }
    }
    out
}

#[test]
fn vector_push_derivative_matches_finite_differences() {
    let z = [0.3, -0.8, 1.1, 0.2];
    let sample_at =
        |zz: &[f64]| FieldSample::vector_from_jets(&test_vector_field(&Jet2::seed_all(zz)));
    let exact = push_vector(&sample_at(&z), &warp_bundle(&z)).unwrap();
    let fd = fd_transformed_deriv(&z, &sample_at, 1e-5);
    assert_close(exact.deriv.as_ref().unwrap(), &fd, 1e-5);
}

#[test]
fn metric_push_derivative_matches_finite_differences() {
    let z = [0.6, 0.25, -0.4, 0.9];
    let sample_at =
        |zz: &[f64]| FieldSample::metric_from_jets(4, &test_metric(&Jet2::seed_all(zz)));
    let exact = push_metric(&sample_at(&z), &warp_bundle(&z)).unwrap();
    let fd = fd_transformed_deriv(&z, &sample_at, 1e-5);
    assert_close(exact.deriv.as_ref().unwrap(), &fd, 1e-5);
    for i in 0..4 {
        for j in 0..4 {
            assert!((exact.value[i * 4 + j] - exact.value[j * 4 + i]).abs() < 1e-12);
        }
    }
}

fn well_conditioned(n: usize) -> impl Strategy<Value = SquareMatrix<f64>> {
    proptest::collection::vec(-0.4f64..0.4, n * n).prop_map(move |v| {
        SquareMatrix::from_vec(n, v).add(&SquareMatrix::identity(n).scale(2.0))
    })
}

proptest! {
    #[test]
    fn inverse_round_trip(a in well_conditioned(4)) {
        let inv = mat_inverse(&a).unwrap();
        let r = a.matmul(&inv).sub(&SquareMatrix::identity(4));
        prop_assert!(r.frobenius_sq().sqrt() < 1e-10);
    }

    #[test]
    fn push_is_functorial_on_linear_maps(
        a in well_conditioned(4),
        b in well_conditioned(4),
        z in proptest::collection::vec(-1.0f64..1.0, 4),
    ) {
        let v = FieldSample::vector_from_jets(&test_vector_field(&Jet2::seed_all(&z)));
        let g = FieldSample::metric_from_jets(4, &test_metric(&Jet2::seed_all(&z)));
        let ba = b.matmul(&a);
        let bz_a = linear_bundle(&a, &z);
        let bz_b = linear_bundle(&b, &bz_a.z);
        let bz_ba = linear_bundle(&ba, &z);

        let two = push_vector(&push_vector(&v, &bz_a).unwrap(), &bz_b).unwrap();
        let one = push_vector(&v, &bz_ba).unwrap();
        assert_close(&two.value, &one.value, 1e-10);
        assert_close(two.deriv.as_ref().unwrap(), one.deriv.as_ref().unwrap(), 1e-10);

        let two = push_metric(&push_metric(&g, &bz_a).unwrap(), &bz_b).unwrap();
        let one = push_metric(&g, &bz_ba).unwrap();
        assert_close(&two.value, &one.value, 1e-10);
        assert_close(two.deriv.as_ref().unwrap(), one.deriv.as_ref().unwrap(), 1e-10);
    }
}
