use std::f64::consts::FRAC_PI_4;

use cartan::linalg;
use cartan::numjet::Multilinear;
use cartan::symspace::{self, LieTripleSystem, SlotForm};
use cartan::zoo::{self, ModelSpec};
use cartan::{ConnectionModel, GeomError, SmoothMap, SymmetricSpaceModel, TangentVector, Vector};
use nalgebra::DMatrix;

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn setup(spec: ModelSpec) -> (SymmetricSpaceModel, ConnectionModel) {
    let m = zoo::build(&spec).unwrap();
    let c = m.canonical_connection();
    (m, c)
}

fn tv(m: &SymmetricSpaceModel, x: &Vector, w: &[f64]) -> TangentVector {
    let p = m.charted.point(x.clone()).unwrap();
    m.charted.tangent(&p, v(w)).unwrap()
}

/// Rotation by `s` carrying `e₃` towards `e₁`.
fn rotation_31(s: f64) -> DMatrix<f64> {
    let (sn, c) = s.sin_cos();
    DMatrix::from_row_slice(3, 3, &[c, 0.0, sn, 0.0, 1.0, 0.0, -sn, 0.0, c])
}

#[test]
fn multiplication_examples() {
    let (flat, _) = setup(ModelSpec::flat(3));
    let (x, y) = (v(&[1.0, 2.0, 3.0]), v(&[-1.0, 0.5, 0.0]));
    assert_eq!(flat.mul(&x, &y).unwrap(), &x * 2.0 - &y);
    assert_eq!(flat.mul(&x, &x).unwrap(), x);
    let (sphere, _) = setup(ModelSpec::sphere(2));
    let e3 = sphere.charted.point(v(&[0.0, 0.0, 1.0])).unwrap();
    let e1 = sphere.charted.point(v(&[1.0, 0.0, 0.0])).unwrap();
    assert_eq!(sphere.multiply(&e3, &e1).unwrap().ambient, v(&[-1.0, 0.0, 0.0]));
    let sym = sphere.symmetry(&e3.ambient);
    assert_eq!(sym(&e3.ambient).unwrap(), e3.ambient);
}

#[test]
fn flat_axioms_are_exact() {
    let (flat, _) = setup(ModelSpec::flat(3));
    assert!(flat.check_axioms(64, 0).unwrap().max() < 1e-12);
    assert!(flat.tangent_square_check(16, 0).unwrap() < 1e-12);
}

#[test]
fn broken_multiplication_fails_involution() {
    let (flat, _) = setup(ModelSpec::flat(3));
    let eps = 1e-3;
    let mu = SmoothMap::new(6, 3, 1.0, move |z| {
        let (x, y) = (z.rows(0, 3).into_owned(), z.rows(3, 3).into_owned());
        let mut out = x * 2.0 - &y;
        out[0] += eps * y[0];
        out
    });
    let broken = SymmetricSpaceModel::new(flat.charted.clone(), mu, Vector::zeros(3), true).unwrap();
    let r = broken.check_axioms(64, 0).unwrap();
    // μ_x(μ_x(y)) − y = ε(2x₀ − 2y₀ + εy₀)e₀, of order ε on the sample ball.
    assert!(r.s2 > 1e-2 * eps && r.s2 < 4.0 * eps, "s2 = {}", r.s2);
}

#[test]
fn tangent_square_is_reflection_in_fibre() {
    let (sphere, _) = setup(ModelSpec::sphere(2));
    let x = sphere.base.ambient.clone();
    let (a, b) = (v(&[0.3, -0.4, 0.0]), v(&[1.0, 0.2, 0.0]));
    assert!(sphere.tangent_square(&x, &a, &b).unwrap() < 1e-7);
    assert!(sphere.tangent_square(&x, &a, &a).unwrap() < 1e-7);
    assert!(sphere.tangent_square_check(16, 3).unwrap() < 1e-7);
}

#[test]
fn slot_forms_agree_and_flat_field_vanishes() {
    let (flat, conn) = setup(ModelSpec::flat(2));
    let chart = &flat.charted.atlas[0];
    let b = conn.coeff(chart, &v(&[0.3, 0.9]), &v(&[1.0, 0.0]), &v(&[0.5, 2.0])).unwrap();
    assert!(b.norm() < 1e-9);
    let (gl, conn) = setup(ModelSpec::matrix_group(2));
    let mixed = conn.with_field(std::sync::Arc::new(gl.canonical_field(SlotForm::MixedSlot)));
    let x = gl.charted.sample_points(&gl.base.ambient, 1, 8).unwrap().remove(0);
    let chart = &gl.charted.atlas[0];
    let (a, w) = (v(&[1.0, 0.5, -0.3, 0.2]), v(&[0.0, 1.0, 0.7, -1.0]));
    let d = conn.coeff(chart, &x, &a, &w).unwrap() - mixed.coeff(chart, &x, &a, &w).unwrap();
    assert!(d.norm() < 1e-6);
    // μ(g,h) = g h⁻¹ g gives B(v,w) = ½(v g⁻¹ w + w g⁻¹ v) at g.
    let (g, vm, wm) = (linalg::unflatten(&x, 2), linalg::unflatten(&a, 2), linalg::unflatten(&w, 2));
    let gi = g.try_inverse().unwrap();
    let oracle = (&vm * &gi * &wm + &wm * &gi * &vm) * 0.5;
    assert!((conn.coeff(chart, &x, &a, &w).unwrap() - linalg::flatten(&oracle)).norm() < 1e-7);
}

#[test]
fn symmetry_transport_identity() {
    let (flat, fc) = setup(ModelSpec::flat(2));
    let w = tv(&flat, &v(&[0.5, 0.5]), &[1.0, -0.3]);
    assert!(flat.symmetry_transport_check(&fc, &w.base, &w, 0.4, 0.7).unwrap() < 1e-9);
    let (sphere, conn) = setup(ModelSpec::sphere(2));
    let eq = tv(&sphere, &v(&[1.0, 0.0, 0.0]), &[0.0, 1.0, 0.0]);
    assert!(sphere.symmetry_transport_check(&conn, &eq.base, &eq, 0.0, FRAC_PI_4).unwrap() < 1e-5);
    assert!(sphere.symmetry_transport_check(&conn, &eq.base, &eq, 0.3, 0.0).unwrap() < 1e-7);
}

#[test]
fn translations() {
    let (flat, fc) = setup(ModelSpec::flat(2));
    let w = tv(&flat, &flat.base.ambient, &[1.0, -0.3]);
    let tau = flat.translation(&fc, &w.base, &w, 0.8).unwrap();
    let y = v(&[2.0, 1.0]);
    assert!((tau.apply(&y).unwrap() - (&y + &w.ambient * 0.8)).norm() < 1e-9);

    let (sphere, conn) = setup(ModelSpec::sphere(2));
    let b = sphere.base.clone();
    let e1 = tv(&sphere, &b.ambient, &[1.0, 0.0, 0.0]);
    let id = sphere.translation(&conn, &b, &e1, 0.0).unwrap();
    let s = 0.9;
    let tau = sphere.translation(&conn, &b, &e1, s).unwrap();
    for y in sphere.charted.sample_points(&b.ambient, 8, 2).unwrap() {
        assert!((id.apply(&y).unwrap() - &y).norm() < 1e-12);
        assert!((tau.apply(&y).unwrap() - rotation_31(s) * &y).norm() < 1e-8);
    }
    let (p, d) = sphere.translation_check(&conn, &b, &e1, 0.4, s).unwrap();
    assert!(p < 1e-5 && d < 1e-5);
}

#[test]
fn symmetries_and_translations_are_affine() {
    let (hyp, conn) = setup(ModelSpec::hyperboloid(2));
    let x = hyp.charted.sample_points(&hyp.base.ambient, 1, 4).unwrap().remove(0);
    let w = tv(&hyp, &hyp.base.ambient, &[0.4, 0.3, 0.0]);
    let tau = hyp.translation(&conn, &hyp.base, &w, 0.6).unwrap();
    let sym = hyp.symmetry(&x);
    let trans = |y: &Vector| tau.apply(y);
    for y in hyp.charted.sample_points(&hyp.base.ambient, 3, 6).unwrap() {
        let p = hyp.charted.point_unchecked(y.clone());
        let e = hyp.charted.frame(&y).unwrap();
        let u = TangentVector { base: p.clone(), ambient: e.column(0) * 0.5 + e.column(1) * 0.2 };
        assert!(hyp.affine_residual(&conn, &sym, &p, &u).unwrap() < 1e-5);
        assert!(hyp.affine_residual(&conn, &trans, &p, &u).unwrap() < 1e-5);
    }
}

#[test]
fn derivation_fields() {
    let (flat, _) = setup(ModelSpec::flat(2));
    let w = tv(&flat, &flat.base.ambient, &[0.7, -1.0]);
    let xi = flat.derivation_field(&w);
    assert!((xi.eval(&v(&[3.0, 1.0])).unwrap() - &w.ambient).norm() < 1e-9);

    let (sphere, conn) = setup(ModelSpec::sphere(2));
    let b = sphere.base.clone();
    let e1 = tv(&sphere, &b.ambient, &[1.0, 0.0, 0.0]);
    let xi = sphere.derivation_field(&e1);
    assert!((xi.eval(&b.ambient).unwrap() - &e1.ambient).norm() < 1e-9);
    // Generator of rotations about e₂: x ↦ (x₂, 0, −x₀).
    let pts = sphere.charted.sample_points(&b.ambient, 6, 1).unwrap();
    for x in &pts {
        assert!((xi.eval(x).unwrap() - v(&[x[2], 0.0, -x[0]])).norm() < 1e-8);
    }
    let tau = sphere.translation(&conn, &b, &e1, 0.6).unwrap();
    assert!((xi.flow(&pts[0], 0.6, 256).unwrap() - tau.apply(&pts[0]).unwrap()).norm() < 1e-5);
    assert!(xi.derivation_residual(&pts[1], &pts[2]).unwrap() < 1e-6);
}

#[test]
fn curvature_brackets() {
    let (flat, conn) = setup(ModelSpec::flat(2));
    let l = flat.lts(&conn).unwrap();
    assert!(l.bracket.entries.iter().all(|e| e.norm() < 1e-8));

    let (sphere, conn) = setup(ModelSpec::sphere(2));
    let l = sphere.lts(&conn).unwrap();
    let (a, b, c) = (v(&[0.3, 1.0]), v(&[-0.7, 0.2]), v(&[0.5, 0.5]));
    assert!(l.bracket(&a, &a, &b).norm() < 1e-10);
    let e = l.basis_matrix();
    let p = sphere.base.clone();
    let amb = |x: &Vector| TangentVector { base: p.clone(), ambient: &e * x };
    let r = conn.curvature(&amb(&a), &amb(&b), &amb(&c)).unwrap();
    assert!((&e * l.bracket(&a, &b, &c) + r.ambient).norm() < 1e-9);
    assert!(l.axiom_residuals(32, 0).max() < 1e-4);
}

#[test]
fn lts_json_round_trip() {
    let (m, conn) = setup(ModelSpec::involutions(2, 1));
    let l = m.lts(&conn).unwrap();
    let text = serde_json::to_string(&l).unwrap();
    let back: LieTripleSystem = serde_json::from_str(&text).unwrap();
    assert_eq!(back, l);
}

#[test]
fn involution_triple_systems() {
    let abelian = Multilinear::zeros(3, 2, 3);
    let minus = DMatrix::<f64>::identity(3, 3) * -1.0;
    let l = symspace::lts_from_involution(&abelian, &minus).unwrap();
    assert_eq!(l.dim, 3);
    assert!(l.bracket.entries.iter().all(|e| e.norm() == 0.0));
    let id = DMatrix::<f64>::identity(3, 3);
    assert_eq!(symspace::lts_from_involution(&abelian, &id).unwrap().dim, 0);

    let gl = symspace::gl_bracket(2);
    let l = symspace::lts_from_involution(&gl, &symspace::negative_transpose(2)).unwrap();
    assert_eq!(l.dim, 3);
    let mats: Vec<DMatrix<f64>> = l.basis.iter().map(|b| linalg::unflatten(b, 2)).collect();
    for m in &mats {
        assert!((m - m.transpose()).amax() < 1e-12);
    }
    let e = l.basis_matrix();
    for (i, x) in mats.iter().enumerate() {
        for (j, y) in mats.iter().enumerate() {
            for (k, z) in mats.iter().enumerate() {
                let xy = x * y - y * x;
                let direct = &xy * z - z * &xy;
                assert!((&direct - direct.transpose()).amax() < 1e-12);
                let via = &e * l.bracket.get(&[i, j, k]);
                assert!((linalg::flatten(&direct) - via).amax() < 1e-12);
            }
        }
    }
    assert!(l.axiom_residuals(64, 1).max() < 1e-10);
}

#[test]
fn involution_preconditions() {
    let gl = symspace::gl_bracket(2);
    let not_invol = DMatrix::<f64>::identity(4, 4) * 2.0;
    assert!(matches!(symspace::lts_from_involution(&gl, &not_invol), Err(GeomError::NotInvolutive { .. })));
    let mut flip = DMatrix::<f64>::identity(4, 4);
    flip[(0, 0)] = -1.0;
    assert!(matches!(symspace::lts_from_involution(&gl, &flip), Err(GeomError::NotAutomorphism { .. })));
}
