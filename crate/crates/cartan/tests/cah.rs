use std::f64::consts::{FRAC_PI_2, PI};

use cartan::cah::{self, GlobalIntegral, PiecewiseGeodesic, TangentMap};
use cartan::zoo::{self, ModelSpec};
use cartan::{ConnectionModel, GeomError, Point, SymmetricSpaceModel, TangentVector, Vector};
use nalgebra::DMatrix;

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn setup(spec: ModelSpec) -> (SymmetricSpaceModel, ConnectionModel) {
    let m = zoo::build(&spec).unwrap();
    let c = m.canonical_connection();
    (m, c)
}

fn at(p: &Point, w: &[f64]) -> TangentVector {
    TangentVector { base: p.clone(), ambient: v(w) }
}

fn rotation(axis: usize, angle: f64) -> DMatrix<f64> {
    let mut q = DMatrix::identity(3, 3);
    let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
    let (s, c) = angle.sin_cos();
    q[(i, i)] = c;
    q[(j, j)] = c;
    q[(i, j)] = -s;
    q[(j, i)] = s;
    q
}

/// Quarter circle from e₃ to e₁, then a quarter circle turned towards e₂.
fn two_segment(m: &SymmetricSpaceModel) -> PiecewiseGeodesic {
    let b = m.base.clone();
    PiecewiseGeodesic::new(0.0, b.clone(), vec![0.0, FRAC_PI_2, PI], vec![at(&b, &[1.0, 0.0, 0.0]), at(&b, &[0.0, 1.0, 0.0])]).unwrap()
}

#[test]
fn curve_data_validation() {
    let (m, _) = setup(ModelSpec::flat(2));
    let b = m.base.clone();
    let w = at(&b, &[1.0, 0.0]);
    assert!(PiecewiseGeodesic::new(0.0, b.clone(), vec![0.0, 1.0], vec![]).is_err());
    assert!(PiecewiseGeodesic::new(0.0, b.clone(), vec![1.0, 0.0], vec![w.clone()]).is_err());
    assert!(PiecewiseGeodesic::new(2.0, b.clone(), vec![0.0, 1.0], vec![w.clone()]).is_err());
    assert!(PiecewiseGeodesic::new(0.5, b, vec![0.0, 1.0], vec![w]).is_ok());
}

#[test]
fn flat_evaluation_and_reanchoring() {
    let (m, conn) = setup(ModelSpec::flat(2));
    let x = m.charted.point(v(&[1.0, 1.0])).unwrap();
    let pg = PiecewiseGeodesic::new(0.0, x.clone(), vec![0.0, 1.0, 3.0], vec![at(&x, &[0.5, -1.0]), at(&x, &[0.0, 2.0])]).unwrap();
    let (p, _) = cah::pg_evaluate(&conn, &pg, 0.0).unwrap();
    assert_eq!(p.ambient, x.ambient);
    let (p, vel) = cah::pg_evaluate(&conn, &pg, 1.0).unwrap();
    assert!((p.ambient - v(&[1.5, 0.0])).norm() < 1e-10);
    assert!((vel.ambient - v(&[0.5, -1.0])).norm() < 1e-10);
    let moved = cah::pg_change_data(&conn, &pg, 3.0).unwrap();
    assert!((&moved.anchor.ambient - v(&[1.5, 4.0])).norm() < 1e-9);
    for (a, b) in moved.vectors.iter().zip(&pg.vectors) {
        assert!((&a.ambient - &b.ambient).norm() < 1e-10);
    }
}

#[test]
fn sphere_two_segment_path() {
    let (m, conn) = setup(ModelSpec::sphere(2));
    let pg = two_segment(&m);
    assert_eq!(cah::pg_evaluate(&conn, &pg, 0.0).unwrap().0.ambient, m.base.ambient);
    // Composition of two exponentials with the transported turn.
    let first = at(&m.base, &[FRAC_PI_2, 0.0, 0.0]);
    let mid = conn.exp_map(&m.base, &first).unwrap();
    let turned = conn.geodesic_transport(&m.base, &first, 1.0, &[at(&m.base, &[0.0, FRAC_PI_2, 0.0])]).unwrap().remove(0);
    let end = conn.exp_map(&mid, &turned).unwrap();
    let (p, _) = cah::pg_evaluate(&conn, &pg, PI).unwrap();
    assert!((&p.ambient - &end.ambient).norm() < 1e-8);
    assert!((p.ambient - v(&[0.0, 1.0, 0.0])).norm() < 1e-7);
}

#[test]
fn sphere_reanchoring_preserves_curve() {
    let (m, conn) = setup(ModelSpec::sphere(2));
    let pg = two_segment(&m);
    let same = cah::pg_change_data(&conn, &pg, 0.0).unwrap();
    assert_eq!(same.anchor.ambient, pg.anchor.ambient);
    let moved = cah::pg_change_data(&conn, &pg, PI).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..32 {
        let t = PI * i as f64 / 31.0;
        let a = cah::pg_evaluate(&conn, &pg, t).unwrap().0.ambient;
        let b = cah::pg_evaluate(&conn, &moved, t).unwrap().0.ambient;
        worst = worst.max((a - b).norm());
    }
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn pushforwards() {
    let (m, conn) = setup(ModelSpec::sphere(2));
    let pg = two_segment(&m);
    let id = TangentMap::scaled_identity(&m.charted, m.base.clone(), 1.0).unwrap();
    let same = cah::pg_pushforward(&conn, &pg, &id).unwrap();
    for (a, b) in same.vectors.iter().zip(&pg.vectors) {
        assert!((&a.ambient - &b.ambient).norm() < 1e-12);
    }
    let zero = TangentMap::scaled_identity(&m.charted, m.base.clone(), 0.0).unwrap();
    let constant = cah::pg_pushforward(&conn, &pg, &zero).unwrap();
    assert!(constant.vectors.iter().all(|w| w.ambient.norm() == 0.0));
    assert_eq!(cah::pg_evaluate(&conn, &constant, 2.0).unwrap().0.ambient, m.base.ambient);

    let (f, fc) = setup(ModelSpec::flat(2));
    let b = f.base.clone();
    let q = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
    let a = TangentMap::new(&f.charted, &f.charted, b.clone(), b.clone(), q.clone()).unwrap();
    let line = PiecewiseGeodesic::new(0.0, b.clone(), vec![0.0, 1.0, 2.0], vec![at(&b, &[1.0, 0.0]), at(&b, &[1.0, 1.0])]).unwrap();
    let rotated = cah::pg_pushforward(&fc, &line, &a).unwrap();
    let end = cah::pg_evaluate(&fc, &rotated, 2.0).unwrap().0.ambient;
    let oracle = &q * cah::pg_evaluate(&fc, &line, 2.0).unwrap().0.ambient;
    assert!((end - oracle).norm() < 1e-9);
}

#[test]
fn transported_maps() {
    let (f, fc) = setup(ModelSpec::flat(2));
    let b = f.base.clone();
    let mat = DMatrix::from_row_slice(2, 2, &[0.8, -0.6, 0.6, 0.8]);
    let a = TangentMap::new(&f.charted, &f.charted, b.clone(), b.clone(), mat.clone()).unwrap();
    let line = PiecewiseGeodesic::new(0.0, b.clone(), vec![0.0, 1.0], vec![at(&b, &[1.0, 2.0])]).unwrap();
    for t in [0.0, 0.5, 1.0] {
        assert!((cah::transported_map(&fc, &fc, &line, &a, t).unwrap().matrix - &mat).amax() < 1e-10);
    }

    // Along the equator from e₁, the transported differential of a rotation Q is Q again.
    let (m, conn) = setup(ModelSpec::sphere(2));
    let e1 = m.charted.point(v(&[1.0, 0.0, 0.0])).unwrap();
    let q = rotation(0, 0.6) * rotation(1, 0.3);
    let qe1 = m.charted.point_unchecked(&q * &e1.ambient);
    let a = TangentMap::from_ambient(&m.charted, &m.charted, e1.clone(), qe1, &q).unwrap();
    let eq = PiecewiseGeodesic::new(0.0, e1.clone(), vec![0.0, FRAC_PI_2], vec![at(&e1, &[0.0, 1.0, 0.0])]).unwrap();
    let at_d = cah::transported_map(&conn, &conn, &eq, &a, 0.0).unwrap();
    assert!((at_d.ambient() - a.ambient()).amax() < 1e-12);
    let end = cah::transported_map(&conn, &conn, &eq, &a, FRAC_PI_2).unwrap();
    assert!((&end.source.ambient - v(&[0.0, 1.0, 0.0])).norm() < 1e-7);
    assert!((&end.target.ambient - &q * &end.source.ambient).norm() < 1e-7);
    let p = m.charted.tangent_projector(&end.source.ambient).unwrap();
    assert!((end.ambient() - &q * p).amax() < 1e-5);
    assert!(end.tangency_residual(&m.charted).unwrap() < 1e-8);
}

#[test]
fn intertwining_residuals() {
    let (m, conn) = setup(ModelSpec::sphere(2));
    let map = |l: f64| TangentMap::scaled_identity(&m.charted, m.base.clone(), l).unwrap();
    assert_eq!(cah::intertwines(&conn, &conn, &map(0.0)).unwrap(), (0.0, 0.0));
    let (t, c) = cah::intertwines(&conn, &conn, &map(1.0)).unwrap();
    assert!(t < 1e-4 && c < 1e-4);
    // λR − λ³R for λ = 2.
    let norm_r = conn.frame_tensors(&m.base.ambient).unwrap().curvature.entries.iter().map(|e| e.norm()).fold(0.0, f64::max);
    let (_, c) = cah::intertwines(&conn, &conn, &map(2.0)).unwrap();
    assert!((c - 6.0 * norm_r).abs() < 1e-4 * c);
    assert!(matches!(cah::integrate_local(&conn, &conn, &map(2.0), 1.0), Err(GeomError::NotMorphism { .. })));
}

#[test]
fn flat_integrals_are_affine() {
    let (f, fc) = setup(ModelSpec::flat(2));
    let b1 = f.base.clone();
    let b2 = f.charted.point(v(&[1.0, 2.0])).unwrap();
    let mat = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 0.5, 1.0]);
    let a = TangentMap::new(&f.charted, &f.charted, b1.clone(), b2.clone(), mat.clone()).unwrap();
    let local = cah::integrate_local(&fc, &fc, &a, 10.0).unwrap();
    let global = cah::integrate_global(&fc, &fc, &a).unwrap();
    for y in [v(&[0.5, -0.2]), v(&[3.0, 1.0]), v(&[-9.0, 4.0])] {
        let oracle = &b2.ambient + &mat * &y;
        if y.norm() < 10.0 {
            assert!((local.apply(&y).unwrap() - &oracle).norm() < 1e-9);
        }
        assert!((global.apply(&y).unwrap() - &oracle).norm() < 1e-8);
        assert!((global.apply_via(&[v(&[0.0, 5.0])], &y).unwrap() - &oracle).norm() < 1e-8);
    }
    assert!(matches!(local.apply(&v(&[20.0, 0.0])), Err(GeomError::OutOfNormalNeighborhood { .. })));
    assert!(matches!(global.apply(&v(&[1.0, 0.0, 0.0])), Err(GeomError::NotMember { .. })));
    let zero = TangentMap::new(&f.charted, &f.charted, b1, b2.clone(), DMatrix::zeros(2, 2)).unwrap();
    let constant = cah::integrate_local(&fc, &fc, &zero, 10.0).unwrap();
    assert!((constant.apply(&v(&[1.0, 1.0])).unwrap() - &b2.ambient).norm() < 1e-12);
}

#[test]
fn global_rotation_on_sphere() {
    let (m, conn) = setup(ModelSpec::sphere(2));
    let b = m.base.clone();
    let q = rotation(0, 0.5) * rotation(1, 1.1);
    let a = TangentMap::from_ambient(&m.charted, &m.charted, b.clone(), m.charted.point_unchecked(&q * &b.ambient), &q).unwrap();
    // A fixed hop radius inside the injectivity radius avoids the radius estimate.
    let f = GlobalIntegral { conn1: conn.clone(), conn2: conn.clone(), map: a, radius: 2.0 };
    let south = v(&[0.0, 0.0, -1.0]);
    let via_x = f.apply_via(&[v(&[1.0, 0.0, 0.0])], &south).unwrap();
    let via_y = f.apply_via(&[v(&[0.0, 1.0, 0.0])], &south).unwrap();
    assert!((&via_x - &via_y).norm() < 1e-5);
    assert!((&via_x - &q * &south).norm() < 1e-5);
    let y = v(&[0.48, -0.6, -0.64]);
    assert!((f.apply(&y).unwrap() - &q * &y).norm() < 1e-5);
    let t = f.tangent_map(&y).unwrap();
    assert!((t.ambient() - &q * m.charted.tangent_projector(&y).unwrap()).amax() < 1e-5);
}

#[test]
fn triple_system_morphisms_integrate() {
    let (m, conn) = setup(ModelSpec::sphere(2));
    let b = m.base.clone();
    let id = cah::integrate_lts_morphism(&m, &m, &TangentMap::scaled_identity(&m.charted, b.clone(), 1.0).unwrap()).unwrap();
    let minus = GlobalIntegral { map: TangentMap::scaled_identity(&m.charted, b.clone(), -1.0).unwrap(), ..id.clone() };
    let zero = GlobalIntegral { map: TangentMap::scaled_identity(&m.charted, b.clone(), 0.0).unwrap(), ..id.clone() };
    for y in m.charted.sample_points(&b.ambient, 4, 9).unwrap().into_iter().chain([v(&[0.6, 0.0, -0.8])]) {
        assert!((id.apply(&y).unwrap() - &y).norm() < 1e-6);
        assert!((minus.apply(&y).unwrap() - m.mul(&b.ambient, &y).unwrap()).norm() < 1e-5);
        assert!((zero.apply(&y).unwrap() - &b.ambient).norm() < 1e-12);
    }
    let fmap = |x: &Vector| minus.apply(x);
    assert!(cah::verify_morphism(&m, &m, &fmap, 4, 0).unwrap() < 1e-4);
    assert!(cah::intertwines(&conn, &conn, &minus.map).unwrap().1 < 1e-4);
}

#[test]
fn triple_system_preconditions() {
    let (m, _) = setup(ModelSpec::sphere(2));
    let double = TangentMap::scaled_identity(&m.charted, m.base.clone(), 2.0).unwrap();
    assert!(matches!(cah::integrate_lts_morphism(&m, &m, &double), Err(GeomError::NotMorphism { .. })));
    let off = m.charted.point(v(&[1.0, 0.0, 0.0])).unwrap();
    let shifted = TangentMap::scaled_identity(&m.charted, off, 1.0).unwrap();
    assert!(matches!(cah::integrate_lts_morphism(&m, &m, &shifted), Err(GeomError::InvalidArgument(_))));
}

#[test]
fn morphism_residuals() {
    let (m, _) = setup(ModelSpec::hyperboloid(2));
    let identity = |x: &Vector| -> cartan::Result<Vector> { Ok(x.clone()) };
    assert_eq!(cah::verify_morphism(&m, &m, &identity, 16, 1).unwrap(), 0.0);
    let b = m.base.ambient.clone();
    let sym = |x: &Vector| m.mul(&b, x);
    assert!(cah::verify_morphism(&m, &m, &sym, 16, 1).unwrap() < 1e-9);
}

#[test]
fn other_component_is_unreachable() {
    let (g, conn) = setup(ModelSpec::matrix_group(2));
    let a = TangentMap::scaled_identity(&g.charted, g.base.clone(), 1.0).unwrap();
    let f = GlobalIntegral { conn1: conn.clone(), conn2: conn, map: a, radius: 1.0 };
    assert!(f.apply(&v(&[1.0, 0.0, 0.0, -1.0])).is_err());
}

#[test]
fn sampled_directions_are_unit_tangents() {
    let (m, _) = setup(ModelSpec::involutions(3, 1));
    for d in cah::sample_directions(&m.charted, &m.base.ambient, 5, 3).unwrap() {
        assert!((d.norm() - 1.0).abs() < 1e-12);
        assert!(m.charted.tangency_residual(&m.base.ambient, &d).unwrap() < 1e-10);
    }
}
