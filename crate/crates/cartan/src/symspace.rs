//! Symmetric spaces given by an ambient multiplication `μ(x, y) = x·y`.
//!
//! The canonical connection is read off from the second derivative of the
//! chart representation of `μ` on the diagonal:
//! `B_x(v, w) = ½ d²μ(x,x)((0,v),(0,w)) = −½ d²μ(x,x)((v,0),(0,w))`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connection::{CoefficientField, ConnectionModel};
use crate::error::{GeomError, Result};
use crate::linalg;
use crate::manifold::{Chart, ChartedModel, Point, TangentVector};
use crate::numjet::{self, Multilinear, SmoothMap, Vector};
use crate::sampling;

pub const DEFAULT_SAMPLES: usize = 64;

#[derive(Clone)]
pub struct SymmetricSpaceModel {
    pub charted: Arc<ChartedModel>,
    /// Multiplication on concatenated ambient pairs.
    pub mu: SmoothMap,
    pub base: Point,
    /// Topological metadata; not verified numerically.
    pub simply_connected: bool,
}

impl std::fmt::Debug for SymmetricSpaceModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymmetricSpaceModel").field("charted", &self.charted).field("base", &self.base.ambient.as_slice()).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
}

impl AxiomReport {
    pub fn max(&self) -> f64 {
        self.s1.max(self.s2).max(self.s3).max(self.s4)
    }
}

fn concat(a: &Vector, b: &Vector) -> Vector {
    let mut z = Vector::zeros(a.len() + b.len());
    z.rows_mut(0, a.len()).copy_from(a);
    z.rows_mut(a.len(), b.len()).copy_from(b);
    z
}

fn fmax(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, |a: f64, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) })
}

impl SymmetricSpaceModel {
    pub fn new(charted: Arc<ChartedModel>, mu: SmoothMap, base: Vector, simply_connected: bool) -> Result<Self> {
        if mu.domain_dim() != 2 * charted.ambient_dim || mu.codomain_dim() != charted.ambient_dim {
            return Err(GeomError::DimensionMismatch { expected: 2 * charted.ambient_dim, got: mu.domain_dim() });
        }
        let base = charted.point(base)?;
        charted.chart_index_at(&base.ambient)?;
        Ok(SymmetricSpaceModel { charted, mu, base, simply_connected })
    }

    pub fn dim(&self) -> usize {
        self.charted.dim
    }

    pub fn mul(&self, x: &Vector, y: &Vector) -> Result<Vector> {
        self.mu.eval(&concat(x, y))
    }

    pub fn multiply(&self, x: &Point, y: &Point) -> Result<Point> {
        self.charted.point(self.mul(&x.ambient, &y.ambient)?)
    }

    /// The symmetry `μ_x : y ↦ x·y`.
    pub fn symmetry<'a>(&'a self, x: &'a Vector) -> impl Fn(&Vector) -> Result<Vector> + 'a {
        move |y| self.mul(x, y)
    }

    /// `Tμ(vx, vy)` at `(x, y)`, differentiating along chart curves in both slots.
    pub fn tmu(&self, x: &Vector, vx: &Vector, y: &Vector, vy: &Vector) -> Result<Vector> {
        let cx = self.charted.chart_curve(x, vx)?;
        let cy = self.charted.chart_curve(y, vy)?;
        let g = |s: f64| self.mu.eval_raw(&concat(&cx(s), &cy(s)));
        numjet::curve_derivative(g, 0.0, self.charted.scale)
    }

    /// Matrix of `T_x μ_x` in the frame at `x`.
    pub fn symmetry_matrix(&self, x: &Vector) -> Result<DMatrix<f64>> {
        self.charted.differential_matrix(&self.charted, &self.symmetry(x), x)
    }

    pub fn check_axioms(&self, samples: usize, seed: u64) -> Result<AxiomReport> {
        let pts = self.charted.sample_points(&self.base.ambient, 3 * samples, seed)?;
        let n = self.dim();
        let rows: Vec<Result<[f64; 4]>> = (0..samples)
            .into_par_iter()
            .map(|i| {
                let (x, y, z) = (&pts[3 * i], &pts[3 * i + 1], &pts[3 * i + 2]);
                let s1 = (self.mul(x, x)? - x).norm();
                let s2 = (self.mul(x, &self.mul(x, y)?)? - y).norm();
                let s3 = (self.mul(x, &self.mul(y, z)?)? - self.mul(&self.mul(x, y)?, &self.mul(x, z)?)?).norm();
                let s4 = linalg::spectral_norm(&(self.symmetry_matrix(x)? + DMatrix::identity(n, n)));
                Ok([s1, s2, s3, s4])
            })
            .collect();
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(AxiomReport {
            s1: fmax(rows.iter().map(|r| r[0])),
            s2: fmax(rows.iter().map(|r| r[1])),
            s3: fmax(rows.iter().map(|r| r[2])),
            s4: fmax(rows.iter().map(|r| r[3])),
        })
    }

    /// `|Tμ_{(x,x)}(v, w) − (2v − w)|`.
    pub fn tangent_square(&self, x: &Vector, v: &Vector, w: &Vector) -> Result<f64> {
        Ok((self.tmu(x, v, x, w)? - (v * 2.0 - w)).norm())
    }

    /// Max `tangent_square` residual over seeded tangent pairs at sampled points.
    pub fn tangent_square_check(&self, samples: usize, seed: u64) -> Result<f64> {
        let pts = self.charted.sample_points(&self.base.ambient, samples, seed)?;
        let mut rng = sampling::rng(seed ^ 0x5eed);
        let mut worst: f64 = 0.0;
        for x in &pts {
            let e = self.charted.frame(x)?;
            let v = &e * sampling::gaussian(&mut rng, self.dim());
            let w = &e * sampling::gaussian(&mut rng, self.dim());
            worst = worst.max(self.tangent_square(x, &v, &w)?);
        }
        Ok(worst)
    }

    pub fn canonical_field(&self, form: SlotForm) -> CanonicalField {
        CanonicalField { mu: self.mu.clone(), ambient_dim: self.charted.ambient_dim, scale: self.charted.scale, form }
    }

    pub fn canonical_connection(&self) -> ConnectionModel {
        ConnectionModel::new(self.charted.clone(), Arc::new(self.canonical_field(SlotForm::SecondSlot)))
    }

    /// Residual of `T_{α(t+s)} μ_{α(t)} = −P_{t+s}^{t−s}(α)` on the frame at `α(t+s)`,
    /// together with the point residual `|α(t)·α(t+s) − α(t−s)|`.
    pub fn symmetry_transport_check(&self, conn: &ConnectionModel, x: &Point, v: &TangentVector, t: f64, s: f64) -> Result<f64> {
        let (pt, _) = conn.geodesic(x, v, t)?;
        let (pts, uts) = conn.geodesic(x, v, t + s)?;
        let (ptm, _) = conn.geodesic(x, v, t - s)?;
        let (end, _, transported) = conn.transport_frame(&pts.ambient, &uts.ambient, -2.0 * s)?;
        let e = self.charted.frame(&pts.ambient)?;
        let sym = self.symmetry(&pt.ambient);
        let mut worst = (sym(&pts.ambient)? - &ptm.ambient).norm().max((&end - &ptm.ambient).norm());
        for i in 0..e.ncols() {
            let lhs = self.charted.differential(&sym, &pts.ambient, &e.column(i).into_owned())?;
            worst = worst.max((lhs + transported.column(i)).norm());
        }
        Ok(worst)
    }

    pub fn translation(&self, conn: &ConnectionModel, x: &Point, v: &TangentVector, s: f64) -> Result<Translation> {
        let (half, _) = conn.geodesic(x, v, 0.5 * s)?;
        Ok(Translation { space: self.clone(), origin: x.ambient.clone(), half: half.ambient })
    }

    /// Residuals of `τ_{α,s}(α(t)) = α(t+s)` and `T_{α(t)}τ_{α,s} = P_t^{t+s}(α)`.
    pub fn translation_check(&self, conn: &ConnectionModel, x: &Point, v: &TangentVector, t: f64, s: f64) -> Result<(f64, f64)> {
        let tau = self.translation(conn, x, v, s)?;
        let (pt, ut) = conn.geodesic(x, v, t)?;
        let (pts, _) = conn.geodesic(x, v, t + s)?;
        let point = (tau.apply(&pt.ambient)? - &pts.ambient).norm();
        let e = self.charted.frame(&pt.ambient)?;
        let (_, _, transported) = conn.transport_frame(&pt.ambient, &ut.ambient, s)?;
        let map = |y: &Vector| tau.apply(y);
        let mut diff: f64 = 0.0;
        for i in 0..e.ncols() {
            let d = self.charted.differential(&map, &pt.ambient, &e.column(i).into_owned())?;
            diff = diff.max((d - transported.column(i)).norm());
        }
        Ok((point, diff))
    }

    /// `|g(exp(y, w)) − exp(g(y), T_y g(w))|` for a map `g` of the space into itself.
    pub fn affine_residual<G>(&self, conn: &ConnectionModel, g: &G, y: &Point, w: &TangentVector) -> Result<f64>
    where
        G: Fn(&Vector) -> Result<Vector>,
    {
        let lhs = g(&conn.exp_map(y, w)?.ambient)?;
        let gy = self.charted.point_unchecked(g(&y.ambient)?);
        let tg = TangentVector { base: gy.clone(), ambient: self.charted.differential(g, &y.ambient, &w.ambient)? };
        Ok((lhs - conn.exp_map(&gy, &tg)?.ambient).norm())
    }

    pub fn derivation_field(&self, v: &TangentVector) -> DerivationField<'_> {
        DerivationField { space: self, v: v.ambient.clone() }
    }

    /// The Lie triple system `[v,w,z] = −R_b(v,w,z)` on the frame at the base.
    pub fn lts(&self, conn: &ConnectionModel) -> Result<LieTripleSystem> {
        let t = conn.frame_tensors(&self.base.ambient)?;
        let n = self.dim();
        let mut bracket = t.curvature.clone();
        for e in bracket.entries.iter_mut() {
            *e = -&*e;
        }
        let basis = (0..n).map(|i| t.frame.column(i).into_owned()).collect();
        Ok(LieTripleSystem { dim: n, bracket, basis })
    }
}

/// `τ_{α,s} = μ_{α(s/2)} ∘ μ_{α(0)}`.
#[derive(Debug, Clone)]
pub struct Translation {
    space: SymmetricSpaceModel,
    pub origin: Vector,
    pub half: Vector,
}

impl Translation {
    pub fn apply(&self, y: &Vector) -> Result<Vector> {
        self.space.mul(&self.half, &self.space.mul(&self.origin, y)?)
    }
}

/// `ξ_v(x) = ½ Tμ(v, Tμ(0_b, 0_x))`: half the first-slot derivative of `μ`
/// at `(b, b·x)` along `v`.
pub struct DerivationField<'a> {
    space: &'a SymmetricSpaceModel,
    pub v: Vector,
}

impl DerivationField<'_> {
    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        let sp = self.space;
        let b = &sp.base.ambient;
        let bx = sp.mul(b, x)?;
        let zero = Vector::zeros(bx.len());
        Ok(sp.tmu(b, &self.v, &bx, &zero)? * 0.5)
    }

    /// `|ξ(x·y) − Tμ(ξ(x), ξ(y))|`.
    pub fn derivation_residual(&self, x: &Vector, y: &Vector) -> Result<f64> {
        let sp = self.space;
        let lhs = self.eval(&sp.mul(x, y)?)?;
        let rhs = sp.tmu(x, &self.eval(x)?, y, &self.eval(y)?)?;
        Ok((lhs - rhs).norm())
    }

    pub fn flow(&self, x: &Vector, t: f64, steps_per_unit: usize) -> Result<Vector> {
        self.space.charted.flow(&|p: &Vector| self.eval(p), x, t, steps_per_unit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotForm {
    /// `½ d²μ((0,v),(0,w))`.
    SecondSlot,
    /// `−½ d²μ((v,0),(0,w))`.
    MixedSlot,
}

/// The canonical coefficient field of a multiplication.
pub struct CanonicalField {
    mu: SmoothMap,
    ambient_dim: usize,
    scale: f64,
    form: SlotForm,
}

impl CanonicalField {
    /// `μ^φ` on concatenated chart coordinates.
    fn local<'a>(&'a self, chart: &'a Chart) -> impl Fn(&Vector) -> Vector + 'a {
        let n = chart.dim;
        let big = self.ambient_dim;
        move |z: &Vector| {
            let a = chart.inverse.eval_raw(&z.rows(0, n).into_owned());
            let b = chart.inverse.eval_raw(&z.rows(n, n).into_owned());
            let mut ab = Vector::zeros(2 * big);
            ab.rows_mut(0, big).copy_from(&a);
            ab.rows_mut(big, big).copy_from(&b);
            chart.forward.eval_raw(&self.mu.eval_raw(&ab))
        }
    }

    fn slots(&self, v: &Vector, w: &Vector) -> (Vector, Vector, f64) {
        let z = Vector::zeros(v.len());
        match self.form {
            SlotForm::SecondSlot => (concat(&z, v), concat(&z, w), 0.5),
            SlotForm::MixedSlot => (concat(v, &z), concat(&z, w), -0.5),
        }
    }
}

impl CoefficientField for CanonicalField {
    fn coeff(&self, chart: &Chart, x: &Vector, v: &Vector, w: &Vector) -> Result<Vector> {
        let f = self.local(chart);
        let (a, b, k) = self.slots(v, w);
        Ok(numjet::derivative(&f, &concat(x, x), &[&a, &b], self.scale)? * k)
    }

    fn symmetric(&self) -> bool {
        self.form == SlotForm::SecondSlot
    }

    fn coeff_derivative(&self, chart: &Chart, x: &Vector, u: &Vector, v: &Vector, w: &Vector, _scale: f64) -> Result<Vector> {
        let f = self.local(chart);
        let (a, b, k) = self.slots(v, w);
        let uu = concat(u, u);
        Ok(numjet::derivative(&f, &concat(x, x), &[&uu, &a, &b], self.scale)? * k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LtsResiduals {
    pub alternating: f64,
    pub jacobi: f64,
    pub derivation: f64,
}

impl LtsResiduals {
    pub fn max(&self) -> f64 {
        self.alternating.max(self.jacobi).max(self.derivation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LieTripleSystem {
    pub dim: usize,
    /// Entry `[i, j, k]` holds `[e_i, e_j, e_k]` in basis coordinates.
    #[serde(with = "multilinear_serde")]
    pub bracket: Multilinear,
    /// Basis vectors in ambient (or Lie algebra) coordinates.
    #[serde(with = "vectors_serde")]
    pub basis: Vec<Vector>,
}

impl LieTripleSystem {
    /// Basis vectors as columns.
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        let rows = self.basis.first().map_or(0, |b| b.len());
        linalg::columns(&self.basis, rows)
    }

    pub fn bracket(&self, x: &Vector, y: &Vector, z: &Vector) -> Vector {
        self.bracket.apply(&[x, y, z])
    }

    /// Max residuals of the three axioms on seeded Gaussian arguments.
    pub fn axiom_residuals(&self, samples: usize, seed: u64) -> LtsResiduals {
        let n = self.dim;
        let mut rng = sampling::rng(seed);
        let mut r = LtsResiduals { alternating: 0.0, jacobi: 0.0, derivation: 0.0 };
        if n == 0 {
            return r;
        }
        for _ in 0..samples {
            let mut g = || {
                let v = sampling::gaussian(&mut rng, n);
                let l = v.norm().max(1e-12);
                v / l
            };
            let (x, y, z, u, w) = (g(), g(), g(), g(), g());
            let b = |a: &Vector, c: &Vector, d: &Vector| self.bracket(a, c, d);
            r.alternating = r.alternating.max(b(&x, &x, &y).norm());
            r.jacobi = r.jacobi.max((b(&x, &y, &z) + b(&y, &z, &x) + b(&z, &x, &y)).norm());
            let lhs = b(&x, &y, &b(&u, &z, &w));
            let rhs = b(&b(&x, &y, &u), &z, &w) + b(&u, &b(&x, &y, &z), &w) + b(&u, &z, &b(&x, &y, &w));
            r.derivation = r.derivation.max((lhs - rhs).norm());
        }
        r
    }

    /// `max |A[e_i,e_j,e_k] − [Ae_i, Ae_j, Ae_k]'|` for `A: self → other`.
    pub fn morphism_residual(&self, other: &LieTripleSystem, a: &DMatrix<f64>) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        let cols: Vec<Vector> = (0..n).map(|i| a.column(i).into_owned()).collect();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let lhs = a * self.bracket.get(&[i, j, k]);
                    let rhs = other.bracket(&cols[i], &cols[j], &cols[k]);
                    worst = worst.max((lhs - rhs).norm());
                }
            }
        }
        worst
    }
}

/// Structure constants of `gl(n)` on the row-major basis `E_ij`.
pub fn gl_bracket(n: usize) -> Multilinear {
    let d = n * n;
    let mut b = Multilinear::zeros(d, 2, d);
    for p in 0..d {
        for q in 0..d {
            let x = linalg::unflatten(&linalg::unit(d, p), n);
            let y = linalg::unflatten(&linalg::unit(d, q), n);
            b.set(&[p, q], linalg::flatten(&(&x * &y - &y * &x)));
        }
    }
    b
}

/// `σ(x) = −xᵀ` on row-major coordinates of `n × n` matrices.
pub fn negative_transpose(n: usize) -> DMatrix<f64> {
    let d = n * n;
    let mut s = DMatrix::zeros(d, d);
    for i in 0..n {
        for j in 0..n {
            s[(j * n + i, i * n + j)] = -1.0;
        }
    }
    s
}

const ALGEBRA_TOL: f64 = 1e-10;

/// The (−1)-eigenspace of an involutive automorphism with `[x,y,z] = [[x,y],z]`.
pub fn lts_from_involution(bracket: &Multilinear, sigma: &DMatrix<f64>) -> Result<LieTripleSystem> {
    let d = bracket.dim;
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(GeomError::DimensionMismatch { expected: d, got: sigma.nrows() });
    }
    let scale = bracket.entries.iter().map(|e| e.amax()).fold(1.0, f64::max);
    let invol = (sigma * sigma - DMatrix::identity(d, d)).amax();
    if invol > ALGEBRA_TOL {
        return Err(GeomError::NotInvolutive { residual: invol });
    }
    let cols: Vec<Vector> = (0..d).map(|i| sigma.column(i).into_owned()).collect();
    let mut auto: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let lhs = sigma * bracket.get(&[i, j]);
            let rhs = bracket.apply(&[&cols[i], &cols[j]]);
            auto = auto.max((lhs - rhs).amax());
        }
    }
    if auto > ALGEBRA_TOL * scale {
        return Err(GeomError::NotAutomorphism { residual: auto });
    }
    let id = DMatrix::<f64>::identity(d, d);
    let minus_proj = (&id - sigma) * 0.5;
    let plus_proj = (&id + sigma) * 0.5;
    let minus = linalg::gram_schmidt((0..d).map(|i| minus_proj.column(i).into_owned()), d, 1e-9);
    let plus = linalg::gram_schmidt((0..d).map(|i| plus_proj.column(i).into_owned()), d, 1e-9);
    let br = |a: &Vector, b: &Vector| bracket.apply(&[a, b]);
    let mut rules: f64 = 0.0;
    for p in &minus {
        for q in &minus {
            rules = rules.max((&minus_proj * br(p, q)).amax());
        }
        for a in &plus {
            rules = rules.max((&plus_proj * br(a, p)).amax());
        }
    }
    for a in &plus {
        for c in &plus {
            rules = rules.max((&minus_proj * br(a, c)).amax());
        }
    }
    if rules > ALGEBRA_TOL * scale * scale.max(1.0) {
        return Err(GeomError::NotAutomorphism { residual: rules });
    }
    let m = minus.len();
    let q = linalg::columns(&minus, d);
    let mut tri = Multilinear::zeros(m, 3, m);
    for i in 0..m {
        for j in 0..m {
            let ij = br(&minus[i], &minus[j]);
            for (k, mk) in minus.iter().enumerate() {
                tri.set(&[i, j, k], q.transpose() * br(&ij, mk));
            }
        }
    }
    Ok(LieTripleSystem { dim: m, bracket: tri, basis: minus })
}

mod multilinear_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::numjet::{Multilinear, Vector};

    #[derive(Serialize, Deserialize)]
    struct Table {
        dim: usize,
        order: usize,
        entries: Vec<Vec<f64>>,
    }

    pub fn serialize<S: Serializer>(m: &Multilinear, s: S) -> Result<S::Ok, S::Error> {
        Table { dim: m.dim, order: m.order, entries: m.entries.iter().map(|e| e.as_slice().to_vec()).collect() }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Multilinear, D::Error> {
        let t = Table::deserialize(d)?;
        Ok(Multilinear { dim: t.dim, order: t.order, entries: t.entries.into_iter().map(Vector::from_vec).collect() })
    }
}

mod vectors_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::numjet::Vector;

    pub fn serialize<S: Serializer>(v: &[Vector], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|e| e.as_slice().to_vec()).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vector>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?.into_iter().map(Vector::from_vec).collect())
    }
}
