//! Concrete symmetric spaces with ambient multiplications and explicit atlases.

use std::sync::Arc;

use nalgebra::DMatrix;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::linalg;
use crate::manifold::{Chart, ChartedModel};
use crate::numjet::{SmoothMap, Vector};
use crate::symspace::SymmetricSpaceModel;

/// Determinant floor for membership in `GL(n)`.
pub const DET_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Flat,
    Quadric,
    MatrixGroup,
    Involutions,
}

/// Model parameters. `n` is the vector-space dimension for `flat`, the
/// manifold dimension for `quadric` (ambient `n + 1`) and the matrix size
/// otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default = "default_n")]
    pub n: usize,
    /// Form matrix for quadrics; identity of size `n + 1` when absent.
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub j: Option<Vec<Vec<f64>>>,
    /// Quadric level; 1 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Dimension of the (+1)-eigenspace for involutions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_n() -> usize {
    2
}

impl ModelSpec {
    fn of(kind: ModelKind, n: usize) -> Self {
        ModelSpec { kind, n, j: None, a: None, k: None, seed: 0 }
    }

    pub fn flat(n: usize) -> Self {
        Self::of(ModelKind::Flat, n)
    }

    pub fn sphere(n: usize) -> Self {
        Self::of(ModelKind::Quadric, n)
    }

    /// Upper sheet of `x₁² + … + x_n² − x_{n+1}² = −1`.
    pub fn hyperboloid(n: usize) -> Self {
        let mut j = vec![vec![0.0; n + 1]; n + 1];
        for (i, row) in j.iter_mut().enumerate() {
            row[i] = if i == n { -1.0 } else { 1.0 };
        }
        ModelSpec { j: Some(j), a: Some(-1.0), ..Self::of(ModelKind::Quadric, n) }
    }

    pub fn matrix_group(n: usize) -> Self {
        Self::of(ModelKind::MatrixGroup, n)
    }

    pub fn involutions(n: usize, k: usize) -> Self {
        ModelSpec { k: Some(k), ..Self::of(ModelKind::Involutions, n) }
    }
}

pub fn build(spec: &ModelSpec) -> Result<SymmetricSpaceModel> {
    match spec.kind {
        ModelKind::Flat => build_flat(spec.n),
        ModelKind::Quadric => {
            let m = spec.n + 1;
            let j = match &spec.j {
                Some(rows) => {
                    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                        return Err(GeomError::InvalidModel(format!("J must be {m}×{m} for a quadric of dimension {}", spec.n)));
                    }
                    DMatrix::from_fn(m, m, |i, k| rows[i][k])
                }
                None => DMatrix::identity(m, m),
            };
            build_quadric(&j, spec.a.unwrap_or(1.0))
        }
        ModelKind::MatrixGroup => build_matrix_group(spec.n),
        ModelKind::Involutions => {
            let k = spec.k.ok_or_else(|| GeomError::InvalidModel("involutions need a signature k".into()))?;
            build_involutions(spec.n, k)
        }
    }
}

fn identity_chart(n: usize, domain: impl Fn(&Vector) -> bool + Send + Sync + 'static) -> Chart {
    Chart::new(0, SmoothMap::new(n, n, 1.0, |x| x.clone()), SmoothMap::new(n, n, 1.0, |x| x.clone()), f64::INFINITY, domain)
}

fn split_pair(z: &Vector, n: usize) -> (Vector, Vector) {
    (z.rows(0, n).into_owned(), z.rows(n, n).into_owned())
}

pub fn build_flat(n: usize) -> Result<SymmetricSpaceModel> {
    if n == 0 {
        return Err(GeomError::InvalidModel("flat model needs n ≥ 1".into()));
    }
    let residual = SmoothMap::new(n, 0, 1.0, |_| Vector::zeros(0));
    let charted = ChartedModel::new(&format!("flat({n})"), n, residual, vec![identity_chart(n, |_| true)]).complete(true);
    let mu = SmoothMap::new(2 * n, n, 1.0, move |z| {
        let (x, y) = split_pair(z, n);
        x * 2.0 - y
    });
    SymmetricSpaceModel::new(Arc::new(charted), mu, Vector::zeros(n), true)
}

fn exactly(j: &DMatrix<f64>, f: impl Fn(usize) -> f64) -> bool {
    let m = j.nrows();
    (0..m).all(|i| (0..m).all(|k| j[(i, k)] == if i == k { f(i) } else { 0.0 }))
}

/// The stereographic pair of charts on the sphere of radius `rho` in `ℝ^m`.
fn stereographic_charts(m: usize, rho: f64) -> Vec<Chart> {
    let n = m - 1;
    let chart = |id: usize, sign: f64| {
        let forward = SmoothMap::new(m, n, rho, move |x| {
            let d = 1.0 + sign * x[n] / rho;
            x.rows(0, n).into_owned() / (rho * d)
        });
        let inverse = SmoothMap::new(n, m, rho, move |u| {
            let s = u.norm_squared();
            let mut p = Vector::zeros(m);
            p.rows_mut(0, n).copy_from(&(u * (2.0 * rho / (1.0 + s))));
            p[n] = sign * rho * (1.0 - s) / (1.0 + s);
            p
        });
        Chart::new(id, forward, inverse, 3f64.sqrt(), move |x: &Vector| sign * x[n] / rho >= -0.5)
    };
    vec![chart(0, 1.0), chart(1, -1.0)]
}

/// Graph charts solving `⟨x,x⟩ = a` for coordinate `i` on the branch where
/// `s·(Jx)_i > 0`.
fn graph_charts(j: &DMatrix<f64>, a: f64, scale: f64) -> Vec<Chart> {
    let m = j.nrows();
    let mut charts = Vec::new();
    for i in 0..m {
        if j[(i, i)] == 0.0 {
            continue;
        }
        for s in [1.0, -1.0] {
            let jf = j.clone();
            let forward = SmoothMap::new(m, m - 1, scale, move |x| Vector::from_iterator(m - 1, (0..m).filter(|&k| k != i).map(|k| x[k])));
            let ji = j.clone();
            let inverse = SmoothMap::new(m - 1, m, scale, move |c| {
                let mut x = Vector::zeros(m);
                for (slot, k) in (0..m).filter(|&k| k != i).enumerate() {
                    x[k] = c[slot];
                }
                let jii = ji[(i, i)];
                let beta: f64 = (0..m).filter(|&k| k != i).map(|k| ji[(i, k)] * x[k]).sum();
                let gamma = (x.transpose() * &ji * &x)[0] - a;
                let disc = beta * beta - jii * gamma;
                x[i] = (-beta + s * disc.sqrt()) / jii;
                x
            });
            let domain = move |x: &Vector| {
                let jx = &jf * x;
                s * jx[i] >= 0.3 * jx.norm()
            };
            charts.push(Chart::new(charts.len(), forward, inverse, f64::INFINITY, domain));
        }
    }
    charts
}

/// The quadric `{x : xᵀJx = a}` with `μ(x,y) = 2(⟨x,y⟩/⟨x,x⟩)x − y`.
pub fn build_quadric(j: &DMatrix<f64>, a: f64) -> Result<SymmetricSpaceModel> {
    let m = j.nrows();
    if m < 2 || j.ncols() != m {
        return Err(GeomError::InvalidModel("quadric form must be square of size ≥ 2".into()));
    }
    if (j - j.transpose()).amax() > 0.0 {
        return Err(GeomError::InvalidModel("quadric form must be symmetric".into()));
    }
    if a == 0.0 || !a.is_finite() {
        return Err(GeomError::InvalidModel("quadric level must be nonzero".into()));
    }
    let eig = j.clone().symmetric_eigen();
    let tol = 1e-12 * eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|l| l.abs() <= tol) {
        return Err(GeomError::InvalidModel("degenerate quadric form".into()));
    }
    let Some(e) = (0..m).rev().find(|&i| eig.eigenvalues[i] * a > 0.0) else {
        return Err(GeomError::InvalidModel(format!("quadric ⟨x,x⟩ = {a} is empty")));
    };
    let diagonal = exactly(j, |i| j[(i, i)]);
    let base = if diagonal {
        let i = (0..m).rev().find(|&i| j[(i, i)] * a > 0.0).expect("eigenvalues are the diagonal");
        linalg::unit(m, i) * (a / j[(i, i)]).sqrt()
    } else {
        eig.eigenvectors.column(e).into_owned() * (a / eig.eigenvalues[e]).sqrt()
    };
    let scale = a.abs().sqrt();
    let sphere = a > 0.0 && exactly(j, |_| 1.0);
    let hyperboloid = a < 0.0 && exactly(j, |i| if i + 1 == m { -1.0 } else { 1.0 });

    let (atlas, complete, simply_connected, name) = if sphere {
        (stereographic_charts(m, scale), true, m >= 3, format!("sphere({})", m - 1))
    } else if hyperboloid {
        let n = m - 1;
        let forward = SmoothMap::new(m, n, scale, move |x| x.rows(0, n).into_owned());
        let inverse = SmoothMap::new(n, m, scale, move |c| {
            let mut x = Vector::zeros(m);
            x.rows_mut(0, n).copy_from(c);
            x[n] = (c.norm_squared() - a).sqrt();
            x
        });
        let chart = Chart::new(0, forward, inverse, f64::INFINITY, move |x: &Vector| x[n] > 0.0);
        (vec![chart], true, true, format!("hyperboloid({n})"))
    } else {
        (graph_charts(j, a, scale), false, false, format!("quadric({})", m - 1))
    };

    let jr = j.clone();
    let residual = SmoothMap::new(m, 1, scale, move |x| Vector::from_element(1, (x.transpose() * &jr * x)[0] - a));
    let charted =
        ChartedModel::new(&name, m - 1, residual, atlas).complete(complete).with_sample_radius(0.5 * if sphere { 1.0 } else { scale });
    let jm = j.clone();
    let mu = SmoothMap::new(2 * m, m, scale, move |z| {
        let (x, y) = split_pair(z, m);
        let xy = (x.transpose() * &jm * &y)[0];
        let xx = (x.transpose() * &jm * &x)[0];
        x * (2.0 * xy / xx) - y
    });
    SymmetricSpaceModel::new(Arc::new(charted), mu, base, simply_connected)
}

/// `GL(n)` as an open subset of `n × n` matrices with `μ(g,h) = g h⁻¹ g`.
pub fn build_matrix_group(n: usize) -> Result<SymmetricSpaceModel> {
    if n == 0 {
        return Err(GeomError::InvalidModel("matrix group needs n ≥ 1".into()));
    }
    let d = n * n;
    let invertible = move |x: &Vector| linalg::unflatten(x, n).determinant().abs() > DET_FLOOR;
    let residual = SmoothMap::new(d, 0, 1.0, |_| Vector::zeros(0));
    let charted = ChartedModel::new(&format!("GL({n})"), d, residual, vec![identity_chart(d, invertible)])
        .with_open_condition(invertible)
        .complete(false)
        .with_sample_radius(0.4);
    let mu = SmoothMap::new(2 * d, d, 1.0, move |z| {
        let (x, y) = split_pair(z, d);
        let g = linalg::unflatten(&x, n);
        match linalg::unflatten(&y, n).try_inverse() {
            Some(hinv) => linalg::flatten(&(&g * hinv * &g)),
            None => Vector::from_element(d, f64::NAN),
        }
    });
    SymmetricSpaceModel::new(Arc::new(charted), mu, linalg::flatten(&DMatrix::identity(n, n)), false)
}

/// `diag(I_k, −I_{n−k})`.
fn signature_matrix(n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i != j {
            0.0
        } else if i < k {
            1.0
        } else {
            -1.0
        }
    })
}

/// Frame rotations for the involution atlas: cyclic coordinate shifts, then
/// the same shifts composed with π/4 rotations in consecutive planes.
fn involution_frames(n: usize) -> Vec<DMatrix<f64>> {
    let shift = |s: usize| DMatrix::from_fn(n, n, |i, j| if (j + s) % n == i { 1.0 } else { 0.0 });
    let mut frames: Vec<DMatrix<f64>> = (0..n).map(shift).collect();
    let c = std::f64::consts::FRAC_1_SQRT_2;
    for p in 0..n.saturating_sub(1) {
        let mut g = DMatrix::identity(n, n);
        g[(p, p)] = c;
        g[(p + 1, p + 1)] = c;
        g[(p, p + 1)] = -c;
        g[(p + 1, p)] = c;
        for s in 0..n {
            frames.push(shift(s) * &g);
        }
    }
    frames
}

/// Charts `(A, B) ↦ S r D r⁻¹ Sᵀ` with `r = [[I, B], [A, I]]`.
fn involution_chart(id: usize, n: usize, k: usize, s: DMatrix<f64>) -> Chart {
    let l = n - k;
    let dim = 2 * k * l;
    let d = signature_matrix(n, k);
    let st = s.transpose();
    let unpack = move |c: &Vector| {
        let a = DMatrix::from_fn(l, k, |i, j| c[i * k + j]);
        let b = DMatrix::from_fn(k, l, |i, j| c[k * l + i * l + j]);
        let mut r = DMatrix::identity(n, n);
        r.view_mut((k, 0), (l, k)).copy_from(&a);
        r.view_mut((0, k), (k, l)).copy_from(&b);
        r
    };
    let (s1, st1) = (s.clone(), st.clone());
    let forward_fn = move |x: &Vector| {
        let xt = &st1 * linalg::unflatten(x, n) * &s1;
        let id_n = DMatrix::<f64>::identity(n, n);
        let p = (&id_n + &xt) * 0.5;
        let q = (&id_n - &xt) * 0.5;
        let p11 = p.view((0, 0), (k, k)).into_owned();
        let q22 = q.view((k, k), (l, l)).into_owned();
        match (p11.try_inverse(), q22.try_inverse()) {
            (Some(pi), Some(qi)) => {
                let a = p.view((k, 0), (l, k)) * pi;
                let b = q.view((0, k), (k, l)) * qi;
                let mut c = Vector::zeros(dim);
                for i in 0..l {
                    for j in 0..k {
                        c[i * k + j] = a[(i, j)];
                    }
                }
                for i in 0..k {
                    for j in 0..l {
                        c[k * l + i * l + j] = b[(i, j)];
                    }
                }
                c
            }
            _ => Vector::from_element(dim, f64::NAN),
        }
    };
    let unpack_inv = unpack;
    let (s2, st2) = (s.clone(), st.clone());
    let inverse = SmoothMap::new(dim, n * n, 1.0, move |c| {
        let r = unpack_inv(c);
        match r.clone().try_inverse() {
            Some(ri) => linalg::flatten(&(&s2 * (r * &d * ri) * &st2)),
            None => Vector::from_element(n * n, f64::NAN),
        }
    });
    let fwd = forward_fn.clone();
    let domain = move |x: &Vector| {
        let c = fwd(x);
        if !c.iter().all(|z| z.is_finite()) || c.amax() > 2.5 {
            return false;
        }
        unpack(&c).singular_values().min() >= 0.3
    };
    Chart::new(id, SmoothMap::new(n * n, dim, 1.0, forward_fn), inverse, 2.5, domain)
}

/// Involutions `x² = 1` of `ℝⁿ` with a `k`-dimensional (+1)-eigenspace, `μ(x,y) = xyx`.
pub fn build_involutions(n: usize, k: usize) -> Result<SymmetricSpaceModel> {
    if n == 0 || k > n {
        return Err(GeomError::InvalidModel(format!("invalid involution signature k = {k} for n = {n}")));
    }
    let dsz = n * n;
    let base = signature_matrix(n, k);
    let trace = (2 * k) as f64 - n as f64;
    let residual = SmoothMap::new(dsz, dsz + 1, 1.0, move |x| {
        let m = linalg::unflatten(x, n);
        let mut r = Vector::zeros(dsz + 1);
        r.rows_mut(0, dsz).copy_from(&linalg::flatten(&(&m * &m - DMatrix::identity(n, n))));
        r[dsz] = m.trace() - trace;
        r
    });
    let dim = 2 * k * (n - k);
    let atlas = if dim == 0 {
        let point = linalg::flatten(&base);
        let p2 = point.clone();
        let forward = SmoothMap::new(dsz, 0, 1.0, |_| Vector::zeros(0));
        let inverse = SmoothMap::new(0, dsz, 1.0, move |_| p2.clone());
        vec![Chart::new(0, forward, inverse, 0.0, move |x: &Vector| (x - &point).amax() < 1e-6)]
    } else {
        involution_frames(n).into_iter().enumerate().map(|(i, s)| involution_chart(i, n, k, s)).collect()
    };
    let charted = ChartedModel::new(&format!("involutions({n},{k})"), dim, residual, atlas).complete(true).with_sample_radius(0.3);
    let mu = SmoothMap::new(2 * dsz, dsz, 1.0, move |z| {
        let (x, y) = split_pair(z, dsz);
        let xm = linalg::unflatten(&x, n);
        linalg::flatten(&(&xm * linalg::unflatten(&y, n) * &xm))
    });
    SymmetricSpaceModel::new(Arc::new(charted), mu, linalg::flatten(&base), dim == 0 || k == 0 || k == n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn sphere_reflection() {
        let s = build(&ModelSpec::sphere(2)).unwrap();
        let y = s.mul(&v(&[0.0, 0.0, 1.0]), &v(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(y, v(&[-1.0, 0.0, 0.0]));
        assert_eq!(s.base.ambient, v(&[0.0, 0.0, 1.0]));
    }

    #[test]
    fn hyperboloid_base_on_upper_sheet() {
        let h = build(&ModelSpec::hyperboloid(2)).unwrap();
        assert_eq!(h.base.ambient, v(&[0.0, 0.0, 1.0]));
        assert!(h.charted.geodesically_complete);
    }

    #[test]
    fn empty_and_degenerate_quadrics_rejected() {
        assert!(build_quadric(&DMatrix::identity(3, 3), -1.0).is_err());
        assert!(build_quadric(&DMatrix::from_diagonal(&v(&[1.0, 0.0, 1.0])), 1.0).is_err());
    }

    #[test]
    fn matrix_group_symmetry_at_identity_is_inversion() {
        let g = build_matrix_group(2).unwrap();
        let h = v(&[2.0, 1.0, 0.0, 1.0]);
        let y = g.mul(&g.base.ambient, &h).unwrap();
        assert!((y - v(&[0.5, -0.5, 0.0, 1.0])).amax() < 1e-15);
        assert!(!g.charted.contains(&v(&[1.0, 1.0, 1.0, 1.0])));
    }

    #[test]
    fn involution_chart_round_trip() {
        let m = build_involutions(3, 1).unwrap();
        assert_eq!(m.dim(), 4);
        let chart = &m.charted.atlas[0];
        let c = v(&[0.3, -0.2, 0.1, 0.4]);
        let x = chart.point(&c).unwrap();
        assert!(m.charted.contains(&x));
        assert!((chart.coords(&x).unwrap() - c).amax() < 1e-12);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = ModelSpec::hyperboloid(2);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"J\""));
        let back: ModelSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<ModelSpec>(r#"{"kind":"flat","bogus":1}"#).is_err());
    }
}
