//! Cartan–Ambrose–Hicks integration of tangent maps.
//!
//! Curves are piecewise geodesics stored by their data at an anchor time:
//! the anchor point and the velocities of all segments transported back to
//! it. Evaluation marches outward from the anchor carrying an orthonormal
//! frame, so every velocity is a fixed combination of the carried frame.

use nalgebra::DMatrix;

use crate::connection::ConnectionModel;
use crate::error::{GeomError, Result};
use crate::linalg;
use crate::manifold::{ChartedModel, Point, TangentVector};
use crate::numjet::Vector;
use crate::sampling;
use crate::symspace::SymmetricSpaceModel;

/// Hop budget for greedy geodesic chains.
pub const HOP_BUDGET: usize = 64;
/// Fraction of the normal radius used for hops that cannot reach the target.
pub const HOP_FRACTION: f64 = 0.5;
/// Largest torsion/curvature intertwining residual accepted for integration.
pub const INTERTWINE_TOLERANCE: f64 = 1e-3;
/// Largest bracket residual accepted for a Lie triple system morphism.
pub const LTS_TOLERANCE: f64 = 1e-4;

/// The broken geodesic with data `(d, α(d); t₀ ≤ … ≤ t_n; v₁, …, v_n)`.
#[derive(Debug, Clone)]
pub struct PiecewiseGeodesic {
    pub d: f64,
    pub anchor: Point,
    pub times: Vec<f64>,
    /// Segment velocities transported to the anchor.
    pub vectors: Vec<TangentVector>,
}

impl PiecewiseGeodesic {
    pub fn new(d: f64, anchor: Point, times: Vec<f64>, vectors: Vec<TangentVector>) -> Result<Self> {
        if times.is_empty() || vectors.len() + 1 != times.len() {
            return Err(GeomError::InvalidArgument(format!(
                "{} times need {} vectors, got {}",
                times.len(),
                times.len().saturating_sub(1),
                vectors.len()
            )));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(GeomError::InvalidArgument("times must be nondecreasing".into()));
        }
        if d < times[0] || d > times[times.len() - 1] {
            return Err(GeomError::InvalidArgument(format!("anchor time {d} outside [{}, {}]", times[0], times[times.len() - 1])));
        }
        Ok(PiecewiseGeodesic { d, anchor, times, vectors })
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn segments(&self) -> usize {
        self.vectors.len()
    }
}

/// Point, velocity and carried anchor frame at one curve parameter.
#[derive(Debug, Clone)]
pub struct Marched {
    pub point: Vector,
    pub velocity: Vector,
    /// `P_d^t` applied to the orthonormal frame at the anchor.
    pub frame: DMatrix<f64>,
}

fn frame_columns(m: &DMatrix<f64>) -> Vec<Vector> {
    (0..m.ncols()).map(|i| m.column(i).into_owned()).collect()
}

/// Marches `pg` from its anchor to parameter `t`.
pub fn pg_march(conn: &ConnectionModel, pg: &PiecewiseGeodesic, t: f64) -> Result<Marched> {
    if t < pg.start() - 1e-12 || t > pg.end() + 1e-12 {
        return Err(GeomError::InvalidArgument(format!("t = {t} outside [{}, {}]", pg.start(), pg.end())));
    }
    let e = conn.model.frame(&pg.anchor.ambient)?;
    let dim = e.nrows();
    let coords: Vec<Vector> = pg.vectors.iter().map(|v| e.transpose() * &v.ambient).collect();
    let n = pg.segments();
    if n == 0 {
        return Ok(Marched { point: pg.anchor.ambient.clone(), velocity: Vector::zeros(dim), frame: e });
    }
    let times = &pg.times;
    let mut point = pg.anchor.ambient.clone();
    let mut frame = e;
    let mut cur = pg.d;
    let forward = t >= pg.d;
    // Segment holding the anchor, preferring the one the march enters.
    let mut i =
        if forward { (0..n).find(|&i| times[i + 1] > pg.d).unwrap_or(n - 1) } else { (0..n).rev().find(|&i| times[i] < pg.d).unwrap_or(0) };
    loop {
        let stop = if forward { t.min(times[i + 1]) } else { t.max(times[i]) };
        let vel = &frame * &coords[i];
        let span = stop - cur;
        if span != 0.0 && vel.iter().any(|z| *z != 0.0) {
            let end = conn.integrate_geodesic(&point, &vel, span, &frame_columns(&frame), None)?;
            point = end.point;
            frame = linalg::columns(&end.carried, dim);
        }
        cur = stop;
        let done = cur == t || (forward && i + 1 == n) || (!forward && i == 0);
        if done {
            return Ok(Marched { velocity: &frame * &coords[i], point, frame });
        }
        i = if forward { i + 1 } else { i - 1 };
    }
}

pub fn pg_evaluate(conn: &ConnectionModel, pg: &PiecewiseGeodesic, t: f64) -> Result<(Point, TangentVector)> {
    let m = pg_march(conn, pg, t)?;
    let p = conn.model.point_unchecked(m.point);
    Ok((p.clone(), TangentVector { base: p, ambient: m.velocity }))
}

/// The same curve described by its data at `dprime`.
pub fn pg_change_data(conn: &ConnectionModel, pg: &PiecewiseGeodesic, dprime: f64) -> Result<PiecewiseGeodesic> {
    let m = pg_march(conn, pg, dprime)?;
    let e = conn.model.frame(&pg.anchor.ambient)?;
    let anchor = conn.model.point_unchecked(m.point);
    let vectors =
        pg.vectors.iter().map(|v| TangentVector { base: anchor.clone(), ambient: &m.frame * (e.transpose() * &v.ambient) }).collect();
    PiecewiseGeodesic::new(dprime, anchor, pg.times.clone(), vectors)
}

/// A linear map between tangent spaces, stored in the orthonormal frames at
/// both base points.
#[derive(Debug, Clone)]
pub struct TangentMap {
    pub source: Point,
    pub target: Point,
    pub source_frame: DMatrix<f64>,
    pub target_frame: DMatrix<f64>,
    pub matrix: DMatrix<f64>,
}

impl TangentMap {
    pub fn new(m1: &ChartedModel, m2: &ChartedModel, source: Point, target: Point, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() != m1.dim || matrix.nrows() != m2.dim {
            return Err(GeomError::DimensionMismatch { expected: m1.dim * m2.dim, got: matrix.len() });
        }
        let source_frame = m1.frame(&source.ambient)?;
        let target_frame = m2.frame(&target.ambient)?;
        Ok(TangentMap { source, target, source_frame, target_frame, matrix })
    }

    /// Restriction of an ambient linear map to the tangent spaces.
    pub fn from_ambient(m1: &ChartedModel, m2: &ChartedModel, source: Point, target: Point, l: &DMatrix<f64>) -> Result<Self> {
        let e1 = m1.frame(&source.ambient)?;
        let e2 = m2.frame(&target.ambient)?;
        let matrix = e2.transpose() * l * &e1;
        Ok(TangentMap { source, target, source_frame: e1, target_frame: e2, matrix })
    }

    pub fn scaled_identity(m: &ChartedModel, base: Point, lambda: f64) -> Result<Self> {
        TangentMap::new(m, m, base.clone(), base, DMatrix::identity(m.dim, m.dim) * lambda)
    }

    /// The map in ambient coordinates.
    pub fn ambient(&self) -> DMatrix<f64> {
        &self.target_frame * &self.matrix * self.source_frame.transpose()
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        &self.target_frame * (&self.matrix * (self.source_frame.transpose() * v))
    }

    pub fn tangency_residual(&self, m2: &ChartedModel) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for c in frame_columns(&(&self.target_frame * &self.matrix)) {
            worst = worst.max(m2.tangency_residual(&self.target.ambient, &c)?);
        }
        Ok(worst)
    }
}

/// `(d, A)_*α`: the curve in the target with data `(d, A(α(d)); times; Av₁, …, Av_n)`.
pub fn pg_pushforward(conn2: &ConnectionModel, pg: &PiecewiseGeodesic, a: &TangentMap) -> Result<PiecewiseGeodesic> {
    if a.source_frame.nrows() != pg.anchor.ambient.len() {
        return Err(GeomError::DimensionMismatch { expected: a.source_frame.nrows(), got: pg.anchor.ambient.len() });
    }
    if (&a.source.ambient - &pg.anchor.ambient).norm() > 1e-9 * conn2.model.scale.max(1.0) {
        return Err(GeomError::InvalidArgument("tangent map is not based at the curve anchor".into()));
    }
    let anchor = a.target.clone();
    let vectors = pg.vectors.iter().map(|v| TangentVector { base: anchor.clone(), ambient: a.apply(&v.ambient) }).collect();
    PiecewiseGeodesic::new(pg.d, anchor, pg.times.clone(), vectors)
}

/// `A_t = P_d^t((A_d)_*α) ∘ A_d ∘ P_t^d(α)`.
pub fn transported_map(
    conn1: &ConnectionModel,
    conn2: &ConnectionModel,
    pg: &PiecewiseGeodesic,
    a: &TangentMap,
    t: f64,
) -> Result<TangentMap> {
    let beta = pg_pushforward(conn2, pg, a)?;
    let m1 = pg_march(conn1, pg, t)?;
    let m2 = pg_march(conn2, &beta, t)?;
    let source = conn1.model.point_unchecked(m1.point);
    let target = conn2.model.point_unchecked(m2.point);
    let ambient = &m2.frame * &a.matrix * linalg::pinv(&m1.frame);
    TangentMap::from_ambient(&conn1.model, &conn2.model, source, target, &ambient)
}

/// Residuals of `A∘Tor₁ = Tor₂∘A²` and `A∘R₁ = R₂∘A³` over the frame basis.
pub fn intertwines(conn1: &ConnectionModel, conn2: &ConnectionModel, a: &TangentMap) -> Result<(f64, f64)> {
    let t1 = conn1.frame_tensors(&a.source.ambient)?;
    let t2 = conn2.frame_tensors(&a.target.ambient)?;
    // Frame tensors use the same deterministic frames as the map; re-express
    // the map on them in case a caller supplied other frames.
    let m = t2.frame.transpose() * a.ambient() * &t1.frame;
    let n = m.ncols();
    let cols = frame_columns(&m);
    let mut tor: f64 = 0.0;
    let mut curv: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let lhs = &m * t1.torsion.get(&[i, j]);
            tor = tor.max((lhs - t2.torsion.apply(&[&cols[i], &cols[j]])).norm());
            for k in 0..n {
                let lhs = &m * t1.curvature.get(&[i, j, k]);
                curv = curv.max((lhs - t2.curvature.apply(&[&cols[i], &cols[j], &cols[k]])).norm());
            }
        }
    }
    Ok((tor, curv))
}

/// `f = exp_{b₂} ∘ A ∘ log_{b₁}` on the normal ball of radius `radius`.
#[derive(Debug, Clone)]
pub struct LocalIntegral {
    pub conn1: ConnectionModel,
    pub conn2: ConnectionModel,
    pub map: TangentMap,
    pub radius: f64,
}

impl LocalIntegral {
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        let p = self.conn1.model.point_unchecked(x.clone());
        let u = self.conn1.log_map(&self.map.source, &p)?;
        let r = u.ambient.norm();
        if r > self.radius {
            return Err(GeomError::OutOfNormalNeighborhood { iterations: 0, residual: r - self.radius });
        }
        let w = TangentVector { base: self.map.target.clone(), ambient: self.map.apply(&u.ambient) };
        Ok(self.conn2.exp_map(&self.map.target, &w)?.ambient)
    }
}

pub fn integrate_local(conn1: &ConnectionModel, conn2: &ConnectionModel, a: &TangentMap, radius: f64) -> Result<LocalIntegral> {
    let (tor, curv) = intertwines(conn1, conn2, a)?;
    let residual = tor.max(curv);
    if residual > INTERTWINE_TOLERANCE {
        return Err(GeomError::NotMorphism { residual });
    }
    Ok(LocalIntegral { conn1: conn1.clone(), conn2: conn2.clone(), map: a.clone(), radius })
}

/// `f(y) = ((A)_*α)(end)` for a piecewise geodesic `α` from `b₁` to `y`.
#[derive(Debug, Clone)]
pub struct GlobalIntegral {
    pub conn1: ConnectionModel,
    pub conn2: ConnectionModel,
    pub map: TangentMap,
    /// Hop radius for chains, the estimated normal radius at `b₁`.
    pub radius: f64,
}

impl GlobalIntegral {
    /// Greedy chain from `b₁` to `y`; hops parameterized by arc length.
    pub fn chain(&self, y: &Vector) -> Result<PiecewiseGeodesic> {
        self.chain_via(&[], y)
    }

    /// Chain through the given waypoints (each reached greedily) and then to `y`.
    pub fn chain_via(&self, waypoints: &[Vector], y: &Vector) -> Result<PiecewiseGeodesic> {
        let conn = &self.conn1;
        let model = &conn.model;
        let b = &self.map.source;
        let e = model.frame(&b.ambient)?;
        let dim = e.nrows();
        let mut point = b.ambient.clone();
        let mut frame = e.clone();
        let mut times = vec![0.0];
        let mut vectors = Vec::new();
        let scale = model.scale;
        let close = 1e-9 * scale.max(1.0);
        for goal in waypoints.iter().chain(std::iter::once(y)) {
            model.point(goal.clone())?;
            loop {
                if (&point - goal).norm() <= close {
                    break;
                }
                if vectors.len() >= HOP_BUDGET {
                    return Err(GeomError::NoChain { hops: HOP_BUDGET });
                }
                let here = model.point_unchecked(point.clone());
                let log = conn.log_map(&here, &model.point_unchecked(goal.clone())).ok();
                let (dir, len, last) = match &log {
                    Some(u) if u.ambient.norm() <= self.radius => {
                        let l = u.ambient.norm();
                        (&u.ambient / l, l, true)
                    }
                    Some(u) => (&u.ambient / u.ambient.norm(), HOP_FRACTION * self.radius, false),
                    None => {
                        let w = model.tangent_projector(&point)? * (goal - &point);
                        if w.norm() <= close {
                            return Err(GeomError::NoChain { hops: vectors.len() });
                        }
                        (&w / w.norm(), HOP_FRACTION * self.radius, false)
                    }
                };
                // The velocity at the anchor is the frame combination of `dir`.
                let c = linalg::pinv(&frame) * &dir;
                vectors.push(TangentVector { base: b.clone(), ambient: &e * &c });
                times.push(times[times.len() - 1] + len);
                let end = conn.integrate_geodesic(&point, &dir, len, &frame_columns(&frame), None)?;
                point = if last { goal.clone() } else { end.point };
                frame = linalg::columns(&end.carried, dim);
                if last {
                    break;
                }
            }
        }
        PiecewiseGeodesic::new(0.0, b.clone(), times, vectors)
    }

    pub fn image_of(&self, pg: &PiecewiseGeodesic) -> Result<Vector> {
        let beta = pg_pushforward(&self.conn2, pg, &self.map)?;
        Ok(pg_march(&self.conn2, &beta, beta.end())?.point)
    }

    pub fn apply(&self, y: &Vector) -> Result<Vector> {
        self.image_of(&self.chain(y)?)
    }

    pub fn apply_via(&self, waypoints: &[Vector], y: &Vector) -> Result<Vector> {
        self.image_of(&self.chain_via(waypoints, y)?)
    }

    /// `T_y f` as the transported map at the end of the chain.
    pub fn tangent_map(&self, y: &Vector) -> Result<TangentMap> {
        let pg = self.chain(y)?;
        transported_map(&self.conn1, &self.conn2, &pg, &self.map, pg.end())
    }
}

pub fn integrate_global(conn1: &ConnectionModel, conn2: &ConnectionModel, a: &TangentMap) -> Result<GlobalIntegral> {
    let (tor, curv) = intertwines(conn1, conn2, a)?;
    let residual = tor.max(curv);
    if residual > INTERTWINE_TOLERANCE {
        return Err(GeomError::NotMorphism { residual });
    }
    let radius = conn1.normal_radius(&a.source, 0)?;
    Ok(GlobalIntegral { conn1: conn1.clone(), conn2: conn2.clone(), map: a.clone(), radius })
}

/// `max |f(x·y) − f(x)·f(y)|` over seeded pairs around the base of `m1`.
pub fn verify_morphism<F>(m1: &SymmetricSpaceModel, m2: &SymmetricSpaceModel, f: &F, samples: usize, seed: u64) -> Result<f64>
where
    F: Fn(&Vector) -> Result<Vector> + Sync,
{
    use rayon::prelude::*;
    let pts = m1.charted.sample_points(&m1.base.ambient, 2 * samples, seed)?;
    let res: Vec<Result<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (&pts[2 * i], &pts[2 * i + 1]);
            let lhs = f(&m1.mul(x, y)?)?;
            let rhs = m2.mul(&f(x)?, &f(y)?)?;
            Ok((lhs - rhs).norm())
        })
        .collect();
    let mut worst: f64 = 0.0;
    for r in res {
        worst = worst.max(r?);
    }
    Ok(worst)
}

/// Integrates a Lie triple system morphism `A: T_{b₁}M₁ → T_{b₂}M₂` to the
/// morphism of pointed symmetric spaces with differential `A`.
pub fn integrate_lts_morphism(m1: &SymmetricSpaceModel, m2: &SymmetricSpaceModel, a: &TangentMap) -> Result<GlobalIntegral> {
    let scale = m1.charted.scale.max(1.0);
    if (&a.source.ambient - &m1.base.ambient).norm() > 1e-9 * scale || (&a.target.ambient - &m2.base.ambient).norm() > 1e-9 * scale {
        return Err(GeomError::InvalidArgument("tangent map must join the base points".into()));
    }
    let c1 = m1.canonical_connection();
    let c2 = m2.canonical_connection();
    let l1 = m1.lts(&c1)?;
    let l2 = m2.lts(&c2)?;
    let m = l2.basis_matrix().transpose() * a.ambient() * l1.basis_matrix();
    let residual = l1.morphism_residual(&l2, &m);
    if residual > LTS_TOLERANCE {
        return Err(GeomError::NotMorphism { residual });
    }
    integrate_global(&c1, &c2, a)
}

/// Seeded unit tangent directions at `x`.
pub fn sample_directions(model: &ChartedModel, x: &Vector, count: usize, seed: u64) -> Result<Vec<Vector>> {
    let e = model.frame(x)?;
    let mut rng = sampling::rng(seed);
    Ok((0..count).map(|_| &e * sampling::unit_vector(&mut rng, model.dim)).collect())
}
