//! Affine connections given by chart-level coefficient fields.
//!
//! A connection is a bilinear field `B^φ_x` per chart. Covariant
//! derivatives, parallel transport and geodesics are computed in chart
//! coordinates with fixed-step RK4, switching charts at step boundaries
//! when the current chart stops accepting the state. Results are returned in
//! ambient coordinates.
//!
//! Sign conventions follow the local formulas
//! `(∇_ξ η)^φ = dη^φ(ξ) − B(η, ξ)`, transport `γ' = B_α(γ, α')`, geodesics
//! `α'' = B_α(α', α')`, and
//! `R(v,w,z) = B(B(z,w),v) − B(B(z,v),w) + dB(w)(z,v) − dB(v)(z,w)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{GeomError, Result};
use crate::linalg;
use crate::manifold::{Chart, ChartedModel, Point, TangentVector};
use crate::numjet::{self, Multilinear, Vector};
use crate::ode::{rk4_step, step_count};
use crate::sampling;

pub const DEFAULT_STEPS: usize = 256;
const LOG_ITERATIONS: usize = 50;
const RADIUS_DIRECTIONS: usize = 20;
const RADIUS_BISECTIONS: usize = 4;
/// Upper bound reported by the normal-radius search, in units of the model scale.
pub const RADIUS_CAP: f64 = 4.0;

/// Local representation of a connection, one bilinear map per chart point.
pub trait CoefficientField: Send + Sync {
    /// `B^φ_x(v, w)` in the coordinates of `chart`.
    fn coeff(&self, chart: &Chart, x: &Vector, v: &Vector, w: &Vector) -> Result<Vector>;

    /// Whether `coeff` is symmetric in `v, w` by construction.
    fn symmetric(&self) -> bool {
        false
    }

    /// `dB(x)(u)(v, w)`; by default a finite difference of `coeff`.
    fn coeff_derivative(&self, chart: &Chart, x: &Vector, u: &Vector, v: &Vector, w: &Vector, scale: f64) -> Result<Vector> {
        let n = x.len();
        let g = |y: &Vector| self.coeff(chart, y, v, w).unwrap_or_else(|_| Vector::from_element(n, f64::NAN));
        numjet::derivative(&g, x, &[u], scale)
    }
}

/// The zero field (flat connection in every chart).
pub struct ZeroField;

impl CoefficientField for ZeroField {
    fn coeff(&self, _chart: &Chart, x: &Vector, _v: &Vector, _w: &Vector) -> Result<Vector> {
        Ok(Vector::zeros(x.len()))
    }

    fn symmetric(&self) -> bool {
        true
    }

    fn coeff_derivative(&self, _: &Chart, x: &Vector, _: &Vector, _: &Vector, _: &Vector, _: f64) -> Result<Vector> {
        Ok(Vector::zeros(x.len()))
    }
}

/// Adds `ε·x₀²·v₁w₁·e₀` in every chart. Its curvature is not parallel, so it
/// serves as a negative control for the parallel-curvature checks.
pub struct PerturbedField {
    pub base: Arc<dyn CoefficientField>,
    pub strength: f64,
}

impl PerturbedField {
    fn extra(&self, x: &Vector, v: &Vector, w: &Vector) -> Vector {
        let mut e = Vector::zeros(x.len());
        if x.len() >= 2 {
            e[0] = self.strength * x[0] * x[0] * v[1] * w[1];
        }
        e
    }
}

impl CoefficientField for PerturbedField {
    fn coeff(&self, chart: &Chart, x: &Vector, v: &Vector, w: &Vector) -> Result<Vector> {
        Ok(self.base.coeff(chart, x, v, w)? + self.extra(x, v, w))
    }

    fn symmetric(&self) -> bool {
        self.base.symmetric()
    }

    fn coeff_derivative(&self, chart: &Chart, x: &Vector, u: &Vector, v: &Vector, w: &Vector, scale: f64) -> Result<Vector> {
        let mut d = self.base.coeff_derivative(chart, x, u, v, w, scale)?;
        if x.len() >= 2 {
            d[0] += 2.0 * self.strength * x[0] * u[0] * v[1] * w[1];
        }
        Ok(d)
    }
}

/// Chart-level coefficient tensors at one point.
#[derive(Debug, Clone)]
pub struct ChartTensors {
    /// `b[i, j] = B(e_i, e_j)`.
    pub b: Multilinear,
    /// `db[l, i, j] = dB(e_l)(e_i, e_j)`.
    pub db: Multilinear,
}

impl ChartTensors {
    pub fn dim(&self) -> usize {
        self.b.dim
    }

    pub fn coeff(&self, v: &Vector, w: &Vector) -> Vector {
        self.b.apply(&[v, w])
    }

    pub fn torsion(&self, v: &Vector, w: &Vector) -> Vector {
        self.coeff(v, w) - self.coeff(w, v)
    }

    pub fn curvature(&self, v: &Vector, w: &Vector, z: &Vector) -> Vector {
        let bzw = self.coeff(z, w);
        let bzv = self.coeff(z, v);
        self.coeff(&bzw, v) - self.coeff(&bzv, w) + self.db.apply(&[w, z, v]) - self.db.apply(&[v, z, w])
    }

    /// The curvature tensor on the coordinate basis.
    pub fn curvature_tensor(&self) -> Multilinear {
        let n = self.dim();
        let mut r = Multilinear::zeros(n, 3, n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = self.curvature(&linalg::unit(n, i), &linalg::unit(n, j), &linalg::unit(n, k));
                    r.set(&[i, j, k], v);
                }
            }
        }
        r
    }
}

/// Tensors at a point expressed in the orthonormal tangent frame.
#[derive(Debug, Clone)]
pub struct FrameTensors {
    /// Ambient frame columns at the point.
    pub frame: DMatrix<f64>,
    pub torsion: Multilinear,
    pub curvature: Multilinear,
}

/// Re-expresses a vector-valued multilinear map under `new = k · old`.
fn change_basis(t: &Multilinear, k: &DMatrix<f64>, kinv: &DMatrix<f64>) -> Multilinear {
    let n = t.dim;
    let cols: Vec<Vector> = (0..n).map(|i| kinv.column(i).into_owned()).collect();
    let mut out = Multilinear::zeros(n, t.order, n);
    let total = n.pow(t.order as u32);
    for flat in 0..total {
        let mut idx = vec![0; t.order];
        let mut rem = flat;
        for slot in (0..t.order).rev() {
            idx[slot] = rem % n;
            rem /= n;
        }
        let args: Vec<&Vector> = idx.iter().map(|&i| &cols[i]).collect();
        out.set(&idx, k * t.apply(&args));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub point: Vector,
    pub vector: Vector,
}

/// A curve with tangent vectors sampled on a time grid.
#[derive(Debug, Clone)]
pub struct CurveLift {
    pub times: Vec<f64>,
    pub points: Vec<Vector>,
    pub vectors: Vec<Vector>,
}

/// End state of a geodesic solve with vectors transported along it.
#[derive(Debug, Clone)]
pub struct GeodesicEnd {
    pub point: Vector,
    pub velocity: Vector,
    pub carried: Vec<Vector>,
}

/// Solution of the pulled-back structure equations at one time. Both forms
/// are stored on the `v′` slot only, in frame coordinates at the base.
#[derive(Debug, Clone)]
pub struct CartanState {
    pub t: f64,
    /// `θ̂(0, v′) = theta_hat · v′`.
    pub theta_hat: DMatrix<f64>,
    /// `ω̂(0, e_j) = omega_hat[j]` as an operator on `T_b`.
    pub omega_hat: Vec<DMatrix<f64>>,
}

impl CartanState {
    fn zero(n: usize) -> Self {
        CartanState { t: 0.0, theta_hat: DMatrix::zeros(n, n), omega_hat: vec![DMatrix::zeros(n, n); n] }
    }

    /// `θ̂(t′, v′)`; the `t′` slot is annihilated.
    pub fn theta(&self, _tprime: f64, vprime: &Vector) -> Vector {
        &self.theta_hat * vprime
    }

    /// `ω̂(t′, v′)`; the `t′` slot is annihilated.
    pub fn omega(&self, _tprime: f64, vprime: &Vector) -> DMatrix<f64> {
        let n = self.theta_hat.nrows();
        let mut m = DMatrix::zeros(n, n);
        for (j, w) in self.omega_hat.iter().enumerate() {
            m += w * vprime[j];
        }
        m
    }

    fn pack(&self) -> Vector {
        let n = self.theta_hat.nrows();
        let mut v = Vector::zeros(n * n * (n + 1));
        v.rows_mut(0, n * n).copy_from_slice(self.theta_hat.as_slice());
        for (j, w) in self.omega_hat.iter().enumerate() {
            v.rows_mut(n * n * (j + 1), n * n).copy_from_slice(w.as_slice());
        }
        v
    }

    fn unpack(t: f64, n: usize, v: &Vector) -> Self {
        let theta_hat = DMatrix::from_column_slice(n, n, v.rows(0, n * n).as_slice());
        let omega_hat = (0..n).map(|j| DMatrix::from_column_slice(n, n, v.rows(n * n * (j + 1), n * n).as_slice())).collect();
        CartanState { t, theta_hat, omega_hat }
    }
}

#[derive(Clone)]
pub struct ConnectionModel {
    pub model: Arc<ChartedModel>,
    field: Arc<dyn CoefficientField>,
    /// RK4 steps per unit curve parameter.
    pub steps: usize,
}

impl std::fmt::Debug for ConnectionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConnectionModel").field("model", &self.model.id).field("steps", &self.steps).finish()
    }
}

impl ConnectionModel {
    pub fn new(model: Arc<ChartedModel>, field: Arc<dyn CoefficientField>) -> Self {
        ConnectionModel { model, field, steps: DEFAULT_STEPS }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps.max(1);
        self
    }

    pub fn field(&self) -> &Arc<dyn CoefficientField> {
        &self.field
    }

    /// Same model with a different coefficient field.
    pub fn with_field(&self, field: Arc<dyn CoefficientField>) -> Self {
        ConnectionModel { model: self.model.clone(), field, steps: self.steps }
    }

    pub fn dim(&self) -> usize {
        self.model.dim
    }

    fn chart(&self, idx: usize) -> &Chart {
        &self.model.atlas[idx]
    }

    pub fn coeff(&self, chart: &Chart, x: &Vector, v: &Vector, w: &Vector) -> Result<Vector> {
        self.field.coeff(chart, x, v, w)
    }

    /// `B(e_i, e_j)` on the coordinate basis.
    pub fn coeff_tensor(&self, chart: &Chart, x: &Vector) -> Result<Multilinear> {
        let n = chart.dim;
        let mut b = Multilinear::zeros(n, 2, n);
        let sym = self.field.symmetric();
        for i in 0..n {
            for j in 0..n {
                if sym && j < i {
                    let v = b.get(&[j, i]).clone();
                    b.set(&[i, j], v);
                    continue;
                }
                let v = self.field.coeff(chart, x, &linalg::unit(n, i), &linalg::unit(n, j))?;
                b.set(&[i, j], v);
            }
        }
        Ok(b)
    }

    pub fn chart_tensors(&self, chart: &Chart, x: &Vector) -> Result<ChartTensors> {
        let n = chart.dim;
        let b = self.coeff_tensor(chart, x)?;
        let sym = self.field.symmetric();
        let mut db = Multilinear::zeros(n, 3, n);
        for l in 0..n {
            let el = linalg::unit(n, l);
            for i in 0..n {
                for j in 0..n {
                    if sym && j < i {
                        let v = db.get(&[l, j, i]).clone();
                        db.set(&[l, i, j], v);
                        continue;
                    }
                    let v = self.field.coeff_derivative(chart, x, &el, &linalg::unit(n, i), &linalg::unit(n, j), self.model.scale)?;
                    db.set(&[l, i, j], v);
                }
            }
        }
        Ok(ChartTensors { b, db })
    }

    /// Chart index, coordinates and chart images of ambient tangent vectors.
    fn localize(&self, x: &Vector, vecs: &[&Vector]) -> Result<(usize, Vector, Vec<Vector>)> {
        let idx = self.model.chart_index_at(x)?;
        let chart = self.chart(idx);
        let c = chart.coords(x)?;
        let vs = vecs.iter().map(|v| chart.push(x, v)).collect::<Result<Vec<_>>>()?;
        Ok((idx, c, vs))
    }

    fn globalize(&self, idx: usize, c: &Vector, vecs: &[Vector]) -> Result<(Vector, Vec<Vector>)> {
        let chart = self.chart(idx);
        let x = chart.point(c)?;
        let vs = if vecs.len() >= chart.dim && chart.dim > 0 {
            let j = chart.inverse_jacobian(c)?;
            vecs.iter().map(|v| &j * v).collect()
        } else {
            vecs.iter().map(|v| chart.pull(c, v)).collect::<Result<Vec<_>>>()?
        };
        Ok((x, vs))
    }

    /// Moves chart state to the first accepting chart if the current one rejects it.
    fn rechart(&self, idx: usize, c: &Vector, vecs: &[Vector]) -> Result<(usize, Vector, Vec<Vector>)> {
        let x = self.chart(idx).point(c)?;
        if self.chart(idx).contains(&x) {
            return Ok((idx, c.clone(), vecs.to_vec()));
        }
        let (_, amb) = self.globalize(idx, c, vecs)?;
        let refs: Vec<&Vector> = amb.iter().collect();
        self.localize(&x, &refs)
    }

    fn tangent_at(&self, x: &Vector, v: Vector) -> TangentVector {
        TangentVector { base: self.model.point_unchecked(x.clone()), ambient: v }
    }

    /// Geodesic from `(x, v)` to parameter `t`, transporting `carried` along.
    pub fn integrate_geodesic(
        &self,
        x: &Vector,
        v: &Vector,
        t: f64,
        carried: &[Vector],
        mut trace: Option<&mut Vec<TraceRow>>,
    ) -> Result<GeodesicEnd> {
        let mut refs: Vec<&Vector> = vec![v];
        refs.extend(carried.iter());
        let (mut idx, mut c, locals) = self.localize(x, &refs)?;
        let n = c.len();
        let k = carried.len();
        let mut state = Vector::zeros(n * (2 + k));
        state.rows_mut(0, n).copy_from(&c);
        for (i, l) in locals.iter().enumerate() {
            state.rows_mut(n * (i + 1), n).copy_from(l);
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(TraceRow { t: 0.0, point: x.clone(), vector: v.clone() });
        }
        let steps = step_count(self.steps, t);
        let h = t / steps as f64;
        for s in 0..steps {
            let chart = self.chart(idx);
            let rhs = |_t: f64, y: &Vector| -> Result<Vector> {
                let xc: Vector = y.rows(0, n).into_owned();
                let vc: Vector = y.rows(n, n).into_owned();
                let mut out = Vector::zeros(y.len());
                out.rows_mut(0, n).copy_from(&vc);
                if k == 0 {
                    out.rows_mut(n, n).copy_from(&self.field.coeff(chart, &xc, &vc, &vc)?);
                } else {
                    let b = self.coeff_tensor(chart, &xc)?;
                    out.rows_mut(n, n).copy_from(&b.apply(&[&vc, &vc]));
                    for i in 0..k {
                        let g: Vector = y.rows(n * (2 + i), n).into_owned();
                        out.rows_mut(n * (2 + i), n).copy_from(&b.apply(&[&g, &vc]));
                    }
                }
                Ok(out)
            };
            state = rk4_step(&rhs, s as f64 * h, &state, h)?;
            if state.iter().any(|z| !z.is_finite()) {
                return Err(GeomError::Evaluation { input: state.as_slice().to_vec() });
            }
            c = state.rows(0, n).into_owned();
            let vecs: Vec<Vector> = (0..=k).map(|i| state.rows(n * (i + 1), n).into_owned()).collect();
            let (ni, nc, nv) = self.rechart(idx, &c, &vecs)?;
            if ni != idx {
                idx = ni;
                state.rows_mut(0, n).copy_from(&nc);
                for (i, l) in nv.iter().enumerate() {
                    state.rows_mut(n * (i + 1), n).copy_from(l);
                }
            }
            if let Some(tr) = trace.as_deref_mut() {
                let cc: Vector = state.rows(0, n).into_owned();
                let (p, vs) = self.globalize(idx, &cc, &[state.rows(n, n).into_owned()])?;
                tr.push(TraceRow { t: (s + 1) as f64 * h, point: p, vector: vs[0].clone() });
            }
        }
        let cc: Vector = state.rows(0, n).into_owned();
        let vecs: Vec<Vector> = (0..=k).map(|i| state.rows(n * (i + 1), n).into_owned()).collect();
        let (point, mut amb) = self.globalize(idx, &cc, &vecs)?;
        let velocity = amb.remove(0);
        Ok(GeodesicEnd { point, velocity, carried: amb })
    }

    pub fn exp_map(&self, x: &Point, v: &TangentVector) -> Result<Point> {
        let end = self.integrate_geodesic(&x.ambient, &v.ambient, 1.0, &[], None)?;
        Ok(self.model.point_unchecked(end.point))
    }

    /// Point and velocity of the geodesic `α` with `α(0) = x`, `α'(0) = v` at parameter `t`.
    pub fn geodesic(&self, x: &Point, v: &TangentVector, t: f64) -> Result<(Point, TangentVector)> {
        let end = self.integrate_geodesic(&x.ambient, &v.ambient, t, &[], None)?;
        let p = self.model.point_unchecked(end.point.clone());
        Ok((p, self.tangent_at(&end.point, end.velocity)))
    }

    /// Parallel transport of `vectors` along the geodesic from `(x, v)` up to parameter `t`.
    pub fn geodesic_transport(&self, x: &Point, v: &TangentVector, t: f64, vectors: &[TangentVector]) -> Result<Vec<TangentVector>> {
        let carried: Vec<Vector> = vectors.iter().map(|w| w.ambient.clone()).collect();
        let end = self.integrate_geodesic(&x.ambient, &v.ambient, t, &carried, None)?;
        Ok(end.carried.into_iter().map(|w| self.tangent_at(&end.point, w)).collect())
    }

    /// Transport of the orthonormal frame at `x` along the geodesic from `(x, v)`.
    /// Returns the end point and the transported frame columns.
    pub fn transport_frame(&self, x: &Vector, v: &Vector, t: f64) -> Result<(Vector, Vector, DMatrix<f64>)> {
        let e = self.model.frame(x)?;
        let carried: Vec<Vector> = (0..e.ncols()).map(|i| e.column(i).into_owned()).collect();
        let end = self.integrate_geodesic(x, v, t, &carried, None)?;
        Ok((end.point, end.velocity, linalg::columns(&end.carried, x.len())))
    }

    /// Lift of `v` along `curve` by RK4 on `γ' = B_α(γ, α')`, sampled at step boundaries.
    pub fn transport_lift<C>(&self, curve: &C, t0: f64, t1: f64, v: &TangentVector, steps: usize) -> Result<CurveLift>
    where
        C: Fn(f64) -> Result<Vector> + Sync,
    {
        let x0 = curve(t0)?;
        let (mut idx, _, mut g) = self.localize(&x0, &[&v.ambient])?;
        let mut lift = CurveLift { times: vec![t0], points: vec![x0], vectors: vec![v.ambient.clone()] };
        let steps = steps.max(1);
        let h = (t1 - t0) / steps as f64;
        if h == 0.0 {
            return Ok(lift);
        }
        let scale = self.model.scale * (t1 - t0).abs().max(1e-3);
        for s in 0..steps {
            let chart = self.chart(idx);
            let n = chart.dim;
            let local = |t: f64| -> Vector {
                match curve(t) {
                    Ok(p) => chart.forward.eval_raw(&p),
                    Err(_) => Vector::from_element(n, f64::NAN),
                }
            };
            let rhs = |t: f64, y: &Vector| -> Result<Vector> {
                let a = local(t);
                let da = numjet::curve_derivative(local, t, scale)?;
                self.field.coeff(chart, &a, y, &da)
            };
            let t = t0 + s as f64 * h;
            let y = rk4_step(&rhs, t, &g[0], h)?;
            let tn = t0 + (s + 1) as f64 * h;
            let p = curve(tn)?;
            let pc = local(tn);
            let (_, amb) = self.globalize(idx, &pc, std::slice::from_ref(&y))?;
            if !self.chart(idx).contains(&p) {
                let (ni, _, nv) = self.localize(&p, &[&amb[0]])?;
                idx = ni;
                g = nv;
            } else {
                g = vec![y];
            }
            lift.times.push(tn);
            lift.points.push(p);
            lift.vectors.push(amb[0].clone());
        }
        Ok(lift)
    }

    pub fn parallel_transport<C>(&self, curve: &C, t0: f64, t1: f64, v: &TangentVector, steps: usize) -> Result<TangentVector>
    where
        C: Fn(f64) -> Result<Vector> + Sync,
    {
        let lift = self.transport_lift(curve, t0, t1, v, steps)?;
        let p = lift.points.last().expect("lift has samples").clone();
        let w = lift.vectors.last().expect("lift has samples").clone();
        Ok(self.tangent_at(&p, w))
    }

    /// `∇_v η` for an ambient vector field `eta`.
    pub fn covariant_derivative<E>(&self, eta: &E, v: &TangentVector) -> Result<TangentVector>
    where
        E: Fn(&Vector) -> Result<Vector>,
    {
        let x = &v.base.ambient;
        let (idx, c, vs) = self.localize(x, &[&v.ambient])?;
        let chart = self.chart(idx);
        let n = chart.dim;
        let local = |y: &Vector| -> Vector {
            let r = chart.point(y).and_then(|p| {
                let e = eta(&p)?;
                chart.push(&p, &e)
            });
            r.unwrap_or_else(|_| Vector::from_element(n, f64::NAN))
        };
        let d = numjet::derivative(&local, &c, &[&vs[0]], self.model.scale)?;
        let eta_c = local(&c);
        let out = d - self.field.coeff(chart, &c, &eta_c, &vs[0])?;
        let (_, amb) = self.globalize(idx, &c, &[out])?;
        Ok(self.tangent_at(x, amb[0].clone()))
    }

    pub fn torsion(&self, v: &TangentVector, w: &TangentVector) -> Result<TangentVector> {
        let x = &v.base.ambient;
        let (idx, c, vs) = self.localize(x, &[&v.ambient, &w.ambient])?;
        let chart = self.chart(idx);
        let t = self.field.coeff(chart, &c, &vs[0], &vs[1])? - self.field.coeff(chart, &c, &vs[1], &vs[0])?;
        let (_, amb) = self.globalize(idx, &c, &[t])?;
        Ok(self.tangent_at(x, amb[0].clone()))
    }

    /// Curvature in an explicitly chosen chart (for chart-independence checks).
    pub fn curvature_in(&self, chart_idx: usize, v: &TangentVector, w: &TangentVector, z: &TangentVector) -> Result<TangentVector> {
        let x = &v.base.ambient;
        let chart = self.chart(chart_idx);
        let c = chart.coords(x)?;
        let vs: Vec<Vector> = [v, w, z].iter().map(|a| chart.push(x, &a.ambient)).collect::<Result<_>>()?;
        let t = self.chart_tensors(chart, &c)?;
        let r = t.curvature(&vs[0], &vs[1], &vs[2]);
        let (_, amb) = self.globalize(chart_idx, &c, &[r])?;
        Ok(self.tangent_at(x, amb[0].clone()))
    }

    pub fn curvature(&self, v: &TangentVector, w: &TangentVector, z: &TangentVector) -> Result<TangentVector> {
        let idx = self.model.chart_index_at(&v.base.ambient)?;
        self.curvature_in(idx, v, w, z)
    }

    /// Torsion and curvature in the orthonormal frame at `x`.
    pub fn frame_tensors(&self, x: &Vector) -> Result<FrameTensors> {
        let idx = self.model.chart_index_at(x)?;
        let chart = self.chart(idx);
        let c = chart.coords(x)?;
        let t = self.chart_tensors(chart, &c)?;
        let n = chart.dim;
        let mut tor = Multilinear::zeros(n, 2, n);
        for i in 0..n {
            for j in 0..n {
                tor.set(&[i, j], t.torsion(&linalg::unit(n, i), &linalg::unit(n, j)));
            }
        }
        let (k, kinv, frame) = self.frame_change(chart, x, &c)?;
        Ok(FrameTensors { torsion: change_basis(&tor, &k, &kinv), curvature: change_basis(&t.curvature_tensor(), &k, &kinv), frame })
    }

    /// `K` with frame coordinates = `K` · chart coordinates, its inverse, and the frame.
    fn frame_change(&self, chart: &Chart, x: &Vector, c: &Vector) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let e = self.model.frame(x)?;
        let j = chart.inverse_jacobian(c)?;
        let k = e.transpose() * j;
        let kinv = k.clone().try_inverse().ok_or(GeomError::DegeneratePoint { rank: 0, expected: chart.dim })?;
        Ok((k, kinv, e))
    }

    /// Norm of `∇_u R` over the orthonormal frame (Frobenius over basis triples,
    /// an upper bound for the operator norm).
    pub fn nabla_r_residual(&self, u: &TangentVector) -> Result<f64> {
        let x = &u.base.ambient;
        let (idx, c, us) = self.localize(x, &[&u.ambient])?;
        let chart = self.chart(idx);
        let n = chart.dim;
        if n == 0 {
            return Ok(0.0);
        }
        let at = self.chart_tensors(chart, &c)?;
        let r = at.curvature_tensor();
        let flat = |y: &Vector| -> Vector {
            match self.chart_tensors(chart, y) {
                Ok(t) => {
                    let rt = t.curvature_tensor();
                    Vector::from_iterator(n.pow(4), rt.entries.iter().flat_map(|e| e.iter().copied()))
                }
                Err(_) => Vector::from_element(n.pow(4), f64::NAN),
            }
        };
        // R is itself a third-order difference; a wider outer step keeps its
        // rounding noise from being amplified.
        let dr = numjet::derivative(&flat, &c, &[&us[0]], 16.0 * self.model.scale)?;
        let u0 = &us[0];
        let mut nabla = Multilinear::zeros(n, 3, n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let (ei, ej, ek) = (linalg::unit(n, i), linalg::unit(n, j), linalg::unit(n, k));
                    let off = ((i * n + j) * n + k) * n;
                    let mut val: Vector = dr.rows(off, n).into_owned();
                    val -= at.coeff(r.get(&[i, j, k]), u0);
                    val += r.apply(&[&at.coeff(&ei, u0), &ej, &ek]);
                    val += r.apply(&[&ei, &at.coeff(&ej, u0), &ek]);
                    val += r.apply(&[&ei, &ej, &at.coeff(&ek, u0)]);
                    nabla.set(&[i, j, k], val);
                }
            }
        }
        let (k, kinv, _) = self.frame_change(chart, x, &c)?;
        let framed = change_basis(&nabla, &k, &kinv);
        Ok(framed.entries.iter().map(|e| e.norm_squared()).sum::<f64>().sqrt())
    }

    /// Inverse of `exp_x` by damped Gauss-Newton on the ambient residual
    /// `exp_x(Ec) − y` over frame coordinates `c`.
    pub fn log_map(&self, x: &Point, y: &Point) -> Result<TangentVector> {
        let xa = &x.ambient;
        let ya = &y.ambient;
        let n = self.dim();
        let e = self.model.frame(xa)?;
        self.model.chart_index_at(ya)?;
        let xchart = &self.model.atlas[self.model.chart_index_at(xa)?];
        let guess = if xchart.contains(ya) {
            let cx = xchart.coords(xa)?;
            xchart.pull(&cx, &(xchart.coords(ya)? - &cx))?
        } else {
            let w = self.model.tangent_projector(xa)? * (ya - xa);
            let l = w.norm();
            if l > 0.0 {
                w * ((ya - xa).norm() / l)
            } else {
                w
            }
        };
        let residual = |c: &Vector| -> Vector {
            match self.integrate_geodesic(xa, &(&e * c), 1.0, &[], None) {
                Ok(end) => end.point - ya,
                Err(_) => Vector::from_element(ya.len(), f64::NAN),
            }
        };
        let norm = |r: &Vector| if r.iter().all(|z| z.is_finite()) { r.norm() } else { f64::INFINITY };
        // The integrator's rounding floor grows with |y|.
        let tol = 1e-11 * self.model.scale.max(ya.norm());
        let accept = 1e-9 * self.model.scale.max(ya.norm());
        // Chart-difference guesses can overshoot; halve while that helps.
        let mut c = e.transpose() * guess;
        let mut r = residual(&c);
        let mut rn = norm(&r);
        for _ in 0..6 {
            let trial = &c * 0.5;
            let tr = residual(&trial);
            let tn = norm(&tr);
            if tn >= rn {
                break;
            }
            (c, r, rn) = (trial, tr, tn);
        }
        // Central differences suffice here: Jacobian error only slows convergence.
        let jacobian = |c: &Vector| -> Result<DMatrix<f64>> {
            let h = f64::EPSILON.cbrt() * self.model.scale.max(c.norm());
            let mut jac = DMatrix::zeros(ya.len(), n);
            for i in 0..n {
                let d = linalg::unit(n, i) * h;
                let col = (residual(&(c + &d)) - residual(&(c - &d))) / (2.0 * h);
                if col.iter().any(|z| !z.is_finite()) {
                    return Err(GeomError::Evaluation { input: c.as_slice().to_vec() });
                }
                jac.set_column(i, &col);
            }
            Ok(jac)
        };
        // Chord iteration: the Jacobian is refreshed only when progress stalls.
        let mut jinv: Option<DMatrix<f64>> = None;
        let mut fresh = false;
        for _ in 0..LOG_ITERATIONS {
            if rn <= tol {
                return Ok(self.tangent_at(xa, &e * &c));
            }
            if !rn.is_finite() {
                break;
            }
            if jinv.is_none() {
                jinv = Some(linalg::pinv(&jacobian(&c)?));
                fresh = true;
            }
            let step = jinv.as_ref().expect("set above") * (-&r);
            let mut lambda = 1.0;
            let mut accepted = false;
            let tries = if rn <= accept { 1 } else { 12 };
            for _ in 0..tries {
                let trial = &c + &step * lambda;
                let tr = residual(&trial);
                let tn = norm(&tr);
                if tn < rn {
                    if tn > 0.05 * rn {
                        jinv = None;
                    }
                    (c, r, rn) = (trial, tr, tn);
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                if fresh || rn <= accept {
                    break;
                }
                jinv = None;
            }
            fresh = false;
        }
        if rn <= accept {
            return Ok(self.tangent_at(xa, &e * &c));
        }
        Err(GeomError::OutOfNormalNeighborhood { iterations: LOG_ITERATIONS, residual: rn })
    }

    /// Largest radius at which `log ∘ exp` round-trips 20 seeded directions,
    /// by doubling then bisection, capped at `RADIUS_CAP · scale`.
    pub fn normal_radius(&self, x: &Point, seed: u64) -> Result<f64> {
        let n = self.dim();
        if n == 0 {
            return Ok(0.0);
        }
        let e = self.model.frame(&x.ambient)?;
        let mut rng = sampling::rng(seed);
        let dirs: Vec<Vector> = (0..RADIUS_DIRECTIONS).map(|_| &e * sampling::unit_vector(&mut rng, n)).collect();
        let coarse = self.clone().with_steps((self.steps / 8).max(32));
        let ok = |r: f64| -> bool {
            dirs.par_iter().all(|d| {
                let v = self.tangent_at(&x.ambient, d * r);
                let Ok(y) = coarse.exp_map(x, &v) else { return false };
                let Ok(w) = coarse.log_map(x, &y) else { return false };
                (&w.ambient - &v.ambient).norm() <= 1e-6 * r.max(1.0)
            })
        };
        let cap = RADIUS_CAP * self.model.scale;
        let mut lo = 0.0;
        let mut hi = 0.25 * self.model.scale;
        while ok(hi) {
            lo = hi;
            if hi >= cap {
                return Ok(cap);
            }
            hi = (2.0 * hi).min(cap);
        }
        for _ in 0..RADIUS_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    /// `v*(x)`: transport of `v` from `b` along the radial geodesic to `x`.
    pub fn adapted_field(&self, b: &Point, v: &TangentVector, x: &Point) -> Result<TangentVector> {
        let u = self.log_map(b, x)?;
        Ok(self.geodesic_transport(b, &u, 1.0, std::slice::from_ref(v))?.remove(0))
    }

    /// Integrates the structure ODEs for `(θ̂, ω̂)` along `t ↦ (t, v)` up to `t_end`.
    pub fn cartan_ode_solve(&self, b: &Point, v: &TangentVector, t_end: f64, steps: usize) -> Result<CartanState> {
        let n = self.dim();
        let tensors = self.frame_tensors(&b.ambient)?;
        let vf = tensors.frame.transpose() * &v.ambient;
        let tor = &tensors.torsion;
        let r = &tensors.curvature;
        let basis: Vec<Vector> = (0..n).map(|i| linalg::unit(n, i)).collect();
        let rhs = |_t: f64, y: &Vector| -> Result<Vector> {
            let s = CartanState::unpack(0.0, n, y);
            let mut dtheta = DMatrix::zeros(n, n);
            let mut domega = vec![DMatrix::zeros(n, n); n];
            for j in 0..n {
                let th = s.theta_hat.column(j).into_owned();
                let col = &basis[j] + &s.omega_hat[j] * &vf + tor.apply(&[&vf, &th]);
                dtheta.set_column(j, &col);
                for (k, ek) in basis.iter().enumerate() {
                    domega[j].set_column(k, &r.apply(&[&vf, &th, ek]));
                }
            }
            Ok(CartanState { t: 0.0, theta_hat: dtheta, omega_hat: domega }.pack())
        };
        let steps = steps.max(1);
        let h = t_end / steps as f64;
        let mut y = CartanState::zero(n).pack();
        for s in 0..steps {
            y = rk4_step(&rhs, s as f64 * h, &y, h)?;
        }
        Ok(CartanState::unpack(t_end, n, &y))
    }

    /// `θ̂_{(t,v)}(0, v′) = t·θ_{exp_b(tv)}(T_{tv} exp_b(v′))` in frame coordinates at `b`.
    pub fn cartan_direct(&self, b: &Point, v: &TangentVector, t: f64, vprime: &TangentVector) -> Result<Vector> {
        let n = self.dim();
        if t == 0.0 {
            return Ok(Vector::zeros(n));
        }
        let ba = &b.ambient;
        let tv = &v.ambient * t;
        let curve = |s: f64| -> Vector {
            let w = &tv + &vprime.ambient * s;
            match self.integrate_geodesic(ba, &w, 1.0, &[], None) {
                Ok(end) => end.point,
                Err(_) => Vector::from_element(ba.len(), f64::NAN),
            }
        };
        let dexp = numjet::curve_derivative(curve, 0.0, self.model.scale)?;
        let (_, _, frame) = self.transport_frame(ba, &tv, 1.0)?;
        let coords = linalg::pinv(&frame) * dexp;
        Ok(coords * t)
    }
}
