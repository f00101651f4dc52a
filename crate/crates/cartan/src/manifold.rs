//! Embedded manifolds: ambient points, tangent vectors and atlases.
//!
//! Points and tangent vectors always live in ambient coordinates. Charts
//! are views used for differentiation and integration; tangent vectors are
//! moved between the two through the differentials of the chart maps.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{GeomError, Result};
use crate::linalg;
use crate::numjet::{self, SmoothMap, Vector};
use crate::ode::{rk4_step, step_count};
use crate::sampling::Halton;

pub const MEMBERSHIP_TOLERANCE: f64 = 1e-9;
pub const TANGENCY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelId(pub Arc<str>);

impl std::fmt::Display for ModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub model: ModelId,
    pub ambient: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: Point,
    pub ambient: Vector,
}

impl TangentVector {
    pub fn scaled(&self, s: f64) -> TangentVector {
        TangentVector { base: self.base.clone(), ambient: &self.ambient * s }
    }
}

type Predicate = dyn Fn(&Vector) -> bool + Send + Sync;

#[derive(Clone)]
pub struct Chart {
    pub id: usize,
    pub dim: usize,
    pub forward: SmoothMap,
    pub inverse: SmoothMap,
    domain: Arc<Predicate>,
    pub radius: f64,
}

impl std::fmt::Debug for Chart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chart").field("id", &self.id).field("dim", &self.dim).field("radius", &self.radius).finish()
    }
}

impl Chart {
    pub fn new<D>(id: usize, forward: SmoothMap, inverse: SmoothMap, radius: f64, domain: D) -> Self
    where
        D: Fn(&Vector) -> bool + Send + Sync + 'static,
    {
        assert_eq!(forward.codomain_dim(), inverse.domain_dim());
        Chart { id, dim: forward.codomain_dim(), forward, inverse, domain: Arc::new(domain), radius }
    }

    /// Domain test on an ambient point.
    pub fn contains(&self, x: &Vector) -> bool {
        (self.domain)(x)
    }

    pub fn coords(&self, x: &Vector) -> Result<Vector> {
        if !self.contains(x) {
            return Err(GeomError::OutsideChart { chart: self.id, point: x.as_slice().to_vec() });
        }
        self.forward.eval(x)
    }

    pub fn point(&self, c: &Vector) -> Result<Vector> {
        self.inverse.eval(c)
    }

    /// dφ(x)·v for an ambient point and ambient tangent vector.
    pub fn push(&self, x: &Vector, v: &Vector) -> Result<Vector> {
        self.forward.directional_derivative(x, &[v])
    }

    /// dφ⁻¹(c)·w for chart coordinates and a coordinate vector.
    pub fn pull(&self, c: &Vector, w: &Vector) -> Result<Vector> {
        self.inverse.directional_derivative(c, &[w])
    }

    /// Columns dφ⁻¹(c)·e_i.
    pub fn inverse_jacobian(&self, c: &Vector) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.inverse.codomain_dim(), self.dim);
        for i in 0..self.dim {
            j.set_column(i, &self.pull(c, &linalg::unit(self.dim, i))?);
        }
        Ok(j)
    }
}

#[derive(Clone)]
pub struct ChartedModel {
    pub id: ModelId,
    pub dim: usize,
    pub ambient_dim: usize,
    pub residual: SmoothMap,
    open: Option<Arc<Predicate>>,
    pub atlas: Vec<Chart>,
    pub tolerance: f64,
    pub tangent_tolerance: f64,
    pub geodesically_complete: bool,
    /// Characteristic length for finite-difference steps.
    pub scale: f64,
    /// Coordinate radius used when sampling around a point.
    pub sample_radius: f64,
}

impl std::fmt::Debug for ChartedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChartedModel")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("ambient_dim", &self.ambient_dim)
            .field("charts", &self.atlas.len())
            .finish()
    }
}

impl ChartedModel {
    pub fn new(id: &str, dim: usize, residual: SmoothMap, atlas: Vec<Chart>) -> Self {
        ChartedModel {
            id: ModelId(Arc::from(id)),
            dim,
            ambient_dim: residual.domain_dim(),
            residual,
            open: None,
            atlas,
            tolerance: MEMBERSHIP_TOLERANCE,
            tangent_tolerance: TANGENCY_TOLERANCE,
            geodesically_complete: false,
            scale: 1.0,
            sample_radius: 0.5,
        }
    }

    /// Adds an open condition (e.g. a determinant floor) to membership.
    pub fn with_open_condition<P>(mut self, p: P) -> Self
    where
        P: Fn(&Vector) -> bool + Send + Sync + 'static,
    {
        self.open = Some(Arc::new(p));
        self
    }

    pub fn complete(mut self, flag: bool) -> Self {
        self.geodesically_complete = flag;
        self
    }

    pub fn with_sample_radius(mut self, r: f64) -> Self {
        self.sample_radius = r;
        self
    }

    pub fn codim(&self) -> usize {
        self.ambient_dim - self.dim
    }

    /// Norm of the membership residual; infinite when the open condition fails.
    pub fn membership_residual(&self, x: &Vector) -> f64 {
        if x.len() != self.ambient_dim {
            return f64::INFINITY;
        }
        if let Some(open) = &self.open {
            if !open(x) {
                return f64::INFINITY;
            }
        }
        let r = self.residual.eval_raw(x);
        if r.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        r.norm()
    }

    pub fn contains(&self, x: &Vector) -> bool {
        self.membership_residual(x) < self.tolerance * self.scale.max(1.0)
    }

    pub fn point(&self, x: Vector) -> Result<Point> {
        let residual = self.membership_residual(&x);
        if residual >= self.tolerance * self.scale.max(1.0) {
            return Err(GeomError::NotMember { residual, point: x.as_slice().to_vec() });
        }
        Ok(Point { model: self.id.clone(), ambient: x })
    }

    /// Wraps an ambient vector without checks; for trusted engine output.
    pub fn point_unchecked(&self, x: Vector) -> Point {
        Point { model: self.id.clone(), ambient: x }
    }

    pub fn chart_index_at(&self, x: &Vector) -> Result<usize> {
        self.atlas
            .iter()
            .position(|c| c.contains(x))
            .ok_or_else(|| GeomError::UncoveredPoint { model: self.id.to_string(), point: x.as_slice().to_vec() })
    }

    pub fn chart_at(&self, x: &Point) -> Result<&Chart> {
        Ok(&self.atlas[self.chart_index_at(&x.ambient)?])
    }

    pub fn residual_jacobian(&self, x: &Vector) -> Result<DMatrix<f64>> {
        if self.residual.codomain_dim() == 0 {
            return Ok(DMatrix::zeros(0, self.ambient_dim));
        }
        Ok(self.residual.jet(x, 1)?.d1)
    }

    /// Orthogonal projector onto the kernel of the membership derivative.
    pub fn tangent_projector(&self, x: &Vector) -> Result<DMatrix<f64>> {
        let j = self.residual_jacobian(x)?;
        let (normal, rank) = linalg::row_space(&j);
        if rank != self.codim() {
            return Err(GeomError::DegeneratePoint { rank, expected: self.codim() });
        }
        Ok(DMatrix::identity(self.ambient_dim, self.ambient_dim) - &normal * normal.transpose())
    }

    pub fn project_tangent(&self, x: &Point, w: &Vector) -> Result<TangentVector> {
        let p = self.tangent_projector(&x.ambient)?;
        Ok(TangentVector { base: x.clone(), ambient: p * w })
    }

    /// |dF(x)·v| relative to max(1, |v|).
    pub fn tangency_residual(&self, x: &Vector, v: &Vector) -> Result<f64> {
        let j = self.residual_jacobian(x)?;
        Ok((j * v).norm() / v.norm().max(1.0))
    }

    pub fn tangent(&self, x: &Point, v: Vector) -> Result<TangentVector> {
        let residual = self.tangency_residual(&x.ambient, &v)?;
        if residual >= self.tangent_tolerance {
            return Err(GeomError::NotTangent { residual });
        }
        Ok(TangentVector { base: x.clone(), ambient: v })
    }

    /// Orthonormal tangent frame: Gram-Schmidt on the projected ambient basis.
    pub fn frame(&self, x: &Vector) -> Result<DMatrix<f64>> {
        let p = self.tangent_projector(x)?;
        let cols = linalg::gram_schmidt((0..self.ambient_dim).map(|i| p.column(i).into_owned()), self.dim, 1e-6);
        if cols.len() != self.dim {
            return Err(GeomError::DegeneratePoint { rank: cols.len(), expected: self.dim });
        }
        Ok(linalg::columns(&cols, self.ambient_dim))
    }

    pub fn to_chart(&self, chart: &Chart, v: &TangentVector) -> Result<Vector> {
        if !chart.contains(&v.base.ambient) {
            return Err(GeomError::OutsideChart { chart: chart.id, point: v.base.ambient.as_slice().to_vec() });
        }
        chart.push(&v.base.ambient, &v.ambient)
    }

    pub fn from_chart(&self, chart: &Chart, c: &Vector, w: &Vector) -> Result<TangentVector> {
        let base = self.point_unchecked(chart.point(c)?);
        Ok(TangentVector { ambient: chart.pull(c, w)?, base })
    }

    /// Chart-straight curve `s ↦ φ⁻¹(φ(x) + s·dφ(x)v)` through `x` with velocity `v`.
    pub fn chart_curve(&self, x: &Vector, v: &Vector) -> Result<impl Fn(f64) -> Vector + '_> {
        let chart = &self.atlas[self.chart_index_at(x)?];
        let c = chart.coords(x)?;
        let w = chart.push(x, v)?;
        Ok(move |s: f64| chart.inverse.eval_raw(&(&c + &w * s)))
    }

    /// `d/ds f(c(s))` at `s = 0` for the chart curve with velocity `v`.
    pub fn differential<F>(&self, f: &F, x: &Vector, v: &Vector) -> Result<Vector>
    where
        F: Fn(&Vector) -> Result<Vector>,
    {
        if v.iter().all(|z| *z == 0.0) {
            return Ok(Vector::zeros(f(x)?.len()));
        }
        let curve = self.chart_curve(x, v)?;
        let g = |s: f64| f(&curve(s)).unwrap_or_else(|_| Vector::from_element(x.len().max(1), f64::NAN));
        numjet::curve_derivative(g, 0.0, self.scale)
    }

    /// Matrix of `T_x f` in the orthonormal frames at `x` and `f(x)`.
    pub fn differential_matrix<F>(&self, target: &ChartedModel, f: &F, x: &Vector) -> Result<DMatrix<f64>>
    where
        F: Fn(&Vector) -> Result<Vector>,
    {
        let e = self.frame(x)?;
        let fx = f(x)?;
        let e2 = target.frame(&fx)?;
        let mut m = DMatrix::zeros(target.dim, self.dim);
        for i in 0..self.dim {
            let d = self.differential(f, x, &e.column(i).into_owned())?;
            m.set_column(i, &(e2.transpose() * d));
        }
        Ok(m)
    }

    /// RK4 flow of an ambient vector field for time `t`, integrated in charts.
    pub fn flow<F>(&self, field: &F, x0: &Vector, t: f64, steps_per_unit: usize) -> Result<Vector>
    where
        F: Fn(&Vector) -> Result<Vector>,
    {
        let mut idx = self.chart_index_at(x0)?;
        let mut c = self.atlas[idx].coords(x0)?;
        let steps = step_count(steps_per_unit, t);
        let h = t / steps as f64;
        for s in 0..steps {
            let chart = &self.atlas[idx];
            let rhs = |_t: f64, y: &Vector| -> Result<Vector> {
                let p = chart.point(y)?;
                chart.push(&p, &field(&p)?)
            };
            c = rk4_step(&rhs, s as f64 * h, &c, h)?;
            let p = self.atlas[idx].point(&c)?;
            if !self.atlas[idx].contains(&p) {
                idx = self.chart_index_at(&p)?;
                c = self.atlas[idx].coords(&p)?;
            }
        }
        self.atlas[idx].point(&c)
    }

    /// Seeded low-discrepancy member points in the chart ball around `center`.
    pub fn sample_points(&self, center: &Vector, count: usize, seed: u64) -> Result<Vec<Vector>> {
        let chart = &self.atlas[self.chart_index_at(center)?];
        let c0 = chart.coords(center)?;
        let mut seq = Halton::new(self.dim.max(1), seed);
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0;
        while out.len() < count {
            attempts += 1;
            if attempts > 64 * count + 64 {
                return Err(GeomError::InvalidModel(format!(
                    "could not sample {count} points of `{}` around {:?}",
                    self.id,
                    center.as_slice()
                )));
            }
            let u = seq.next_ball();
            let c = &c0 + u.rows(0, self.dim) * self.sample_radius;
            let Ok(x) = chart.point(&c) else { continue };
            if self.contains(&x) && self.chart_index_at(&x).is_ok() {
                out.push(x);
            }
        }
        Ok(out)
    }
}
