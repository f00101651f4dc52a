//! Command dispatch: each command turns a scenario into named residual checks.

use std::fmt::Write as _;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use cartan::cah::{self, TangentMap};
use cartan::symspace::{SlotForm, SymmetricSpaceModel};
use cartan::zoo::{self, ModelSpec};
use cartan::{ConnectionModel, GeomError, Point, TangentVector, Vector};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::Value;

use crate::scenario::{Command, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub engine_version: &'static str,
    pub scenario: Scenario,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub data: Value,
    pub pass: bool,
    pub duration_ms: u64,
}

/// Failure classes mapped to exit codes by the caller.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Engine(anyhow::Error),
}

impl From<GeomError> for Failure {
    fn from(e: GeomError) -> Self {
        Failure::Engine(e.into())
    }
}

fn input(msg: impl std::fmt::Display) -> Failure {
    Failure::Input(anyhow!("{msg}"))
}

pub struct Outcome {
    pub checks: Vec<Check>,
    pub data: Value,
    pub trace: Option<String>,
}

struct Checks<'a> {
    tol: &'a std::collections::BTreeMap<String, f64>,
    out: Vec<Check>,
}

impl Checks<'_> {
    fn add(&mut self, name: &str, residual: f64, threshold: f64) {
        let threshold = self.tol.get(name).copied().unwrap_or(threshold);
        // NaN residuals fail.
        let pass = residual < threshold;
        self.out.push(Check { name: name.to_string(), residual, threshold, pass });
    }
}

fn vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

fn required<'a, T>(v: &'a Option<T>, field: &str, cmd: Command) -> Result<&'a T, Failure> {
    v.as_ref().ok_or_else(|| input(format!("command {cmd:?} requires `{field}`")))
}

fn build(spec: &ModelSpec) -> Result<SymmetricSpaceModel, Failure> {
    zoo::build(spec).map_err(|e| Failure::Input(anyhow::Error::new(e).context("building model")))
}

fn member(m: &SymmetricSpaceModel, x: &Option<Vec<f64>>) -> Result<Point, Failure> {
    match x {
        None => Ok(m.base.clone()),
        Some(v) => m.charted.point(vector(v)).map_err(|e| Failure::Input(anyhow::Error::new(e).context("point is not on the model"))),
    }
}

fn tangent(m: &SymmetricSpaceModel, x: &Point, v: &[f64]) -> Result<TangentVector, Failure> {
    m.charted.tangent(x, vector(v)).map_err(|e| Failure::Input(anyhow::Error::new(e).context("vector is not tangent")))
}

fn matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>, Failure> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(input(format!("`A` must be {nrows}×{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn execute(s: &Scenario) -> Result<Outcome, Failure> {
    let mut c = Checks { tol: &s.tolerances, out: Vec::new() };
    let mut data = Value::Null;
    let mut trace = None;
    let cmd = s.command;
    match cmd {
        Command::Axioms => {
            let m = build(required(&s.model, "model", cmd)?)?;
            let r = m.check_axioms(s.samples, s.seed)?;
            let exact = s.model.as_ref().is_some_and(|m| m.kind == zoo::ModelKind::Flat);
            let t = if exact { 1e-12 } else { 1e-7 };
            c.add("s1", r.s1, t);
            c.add("s2", r.s2, t);
            c.add("s3", r.s3, t);
            c.add("s4_differential", r.s4, t);
            c.add("tangent_square", m.tangent_square_check(s.samples.min(16), s.seed)?, 1e-7);
            let pts = m.charted.sample_points(&m.base.ambient, 2 * s.samples, s.seed ^ 1)?;
            let mut closure: f64 = 0.0;
            for p in pts.chunks(2) {
                closure = closure.max(m.charted.membership_residual(&m.mul(&p[0], &p[1])?));
            }
            c.add("closure", closure, 1e-9);
        }
        Command::ConnectionSuite => {
            let m = build(required(&s.model, "model", cmd)?)?;
            let conn = m.canonical_connection().with_steps(s.steps);
            let mixed = conn.with_field(Arc::new(m.canonical_field(SlotForm::MixedSlot)));
            let pts = m.charted.sample_points(&m.base.ambient, s.samples.min(32), s.seed)?;
            let dirs_seed = s.seed ^ 0xd1;
            let (mut tor, mut slots, mut nabla, mut roundtrip): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
            for (i, x) in pts.iter().enumerate() {
                let p = m.charted.point_unchecked(x.clone());
                let ft = mixed.frame_tensors(x)?;
                tor = tor.max(ft.torsion.entries.iter().map(|e| e.norm()).fold(0.0, f64::max));
                let chart = m.charted.chart_at(&p)?;
                let cx = chart.coords(x)?;
                let b2 = conn.coeff_tensor(chart, &cx)?;
                let b1 = mixed.coeff_tensor(chart, &cx)?;
                for (u, w) in b1.entries.iter().zip(&b2.entries) {
                    slots = slots.max((u - w).norm());
                }
                let d = cah::sample_directions(&m.charted, x, 2, dirs_seed + i as u64)?;
                nabla = nabla.max(conn.nabla_r_residual(&TangentVector { base: p.clone(), ambient: d[0].clone() })?);
                let v = TangentVector { base: p.clone(), ambient: &d[1] * 0.5 };
                let y = conn.exp_map(&p, &v)?;
                roundtrip = roundtrip.max((conn.log_map(&p, &y)?.ambient - &v.ambient).norm());
            }
            c.add("torsion", tor, 1e-7);
            c.add("slot_forms_agree", slots, 1e-6);
            c.add("nabla_curvature", nabla, 1e-4);
            c.add("exp_log_roundtrip", roundtrip, 1e-6);
        }
        Command::CartanVerify => {
            let m = build(required(&s.model, "model", cmd)?)?;
            let conn = m.canonical_connection().with_steps(s.steps);
            let b = member(&m, &s.point)?;
            let radius = conn.normal_radius(&b, s.seed)?;
            let e = m.charted.frame(&b.ambient)?;
            let mut rng = cartan::sampling::rng(s.seed);
            let mut worst: f64 = 0.0;
            let mut eq4: f64 = 0.0;
            for _ in 0..s.samples.min(16) {
                let vf = cartan::sampling::unit_vector(&mut rng, m.dim());
                let vpf = cartan::sampling::gaussian(&mut rng, m.dim());
                let t = 0.5 * radius * cartan::sampling::uniform(&mut rng);
                let v = TangentVector { base: b.clone(), ambient: &e * &vf };
                let vp = TangentVector { base: b.clone(), ambient: &e * &vpf };
                let state = conn.cartan_ode_solve(&b, &v, t, 64)?;
                worst = worst.max((state.theta(0.0, &vpf) - conn.cartan_direct(&b, &v, t, &vp)?).norm());
                eq4 = eq4.max((conn.cartan_direct(&b, &v, t, &v)? - &vf * t).norm());
            }
            c.add("cartan_equivalence", worst, 1e-4);
            c.add("radial_solder_form", eq4, 1e-6);
            data = serde_json::json!({ "normal_radius": radius });
        }
        Command::Lts => {
            let m = build(required(&s.model, "model", cmd)?)?;
            let conn = m.canonical_connection().with_steps(s.steps);
            let l = m.lts(&conn)?;
            let r = l.axiom_residuals(s.samples, s.seed);
            c.add("lts_alternating", r.alternating, 1e-4);
            c.add("lts_jacobi", r.jacobi, 1e-4);
            c.add("lts_derivation", r.derivation, 1e-4);
            data = serde_json::to_value(&l).map_err(|e| Failure::Engine(e.into()))?;
        }
        Command::Geodesic | Command::Transport => {
            let m = build(required(&s.model, "model", cmd)?)?;
            let conn = m.canonical_connection().with_steps(s.steps);
            let x = member(&m, &s.point)?;
            let v = tangent(&m, &x, required(&s.velocity, "velocity", cmd)?)?;
            let carried = match cmd {
                Command::Transport => vec![tangent(&m, &x, required(&s.vector, "vector", cmd)?)?.ambient],
                _ => vec![],
            };
            let mut rows = Vec::new();
            let end = conn.integrate_geodesic(&x.ambient, &v.ambient, s.time, &carried, Some(&mut rows))?;
            c.add("endpoint_membership", m.charted.membership_residual(&end.point), 1e-7);
            if cmd == Command::Geodesic {
                let scaled = conn.exp_map(&x, &v.scaled(s.time))?;
                c.add("rescaling", (scaled.ambient - &end.point).norm(), 1e-8);
                let tv = TangentVector { base: x.clone(), ambient: &v.ambient * s.time };
                let back = conn.log_map(&x, &m.charted.point_unchecked(end.point.clone()));
                let r = back.map(|w| (w.ambient - tv.ambient).norm()).unwrap_or(f64::INFINITY);
                c.add("exp_log_roundtrip", r, 1e-6);
                trace = Some(csv(&rows, None));
            } else {
                let w = &end.carried[0];
                let back = conn.integrate_geodesic(&end.point, &end.velocity, -s.time, std::slice::from_ref(w), None)?;
                c.add("transport_inverse", (&back.carried[0] - &carried[0]).norm(), 1e-7);
                c.add("transport_tangency", m.charted.tangency_residual(&end.point, w)?, 1e-8);
                let lifted = lift_rows(&conn, &x, &v, &carried[0], s.time)?;
                trace = Some(csv(&rows, Some(&lifted)));
            }
            data = serde_json::json!({
                "point": end.point.as_slice(),
                "velocity": end.velocity.as_slice(),
                "carried": end.carried.iter().map(|w| w.as_slice().to_vec()).collect::<Vec<_>>(),
            });
        }
        Command::Integrate | Command::IntegrateLts => {
            let m1 = build(required(&s.source, "source", cmd)?)?;
            let m2 = build(required(&s.target, "target", cmd)?)?;
            let b1 = member(&m1, &s.base1)?;
            let b2 = member(&m2, &s.base2)?;
            let rows = required(&s.a, "A", cmd)?;
            let a = TangentMap::new(&m1.charted, &m2.charted, b1, b2, matrix(rows, m2.dim(), m1.dim())?)?;
            let c1 = m1.canonical_connection().with_steps(s.steps);
            let c2 = m2.canonical_connection().with_steps(s.steps);
            let (tor, curv) = cah::intertwines(&c1, &c2, &a)?;
            c.add("intertwines_torsion", tor, cah::INTERTWINE_TOLERANCE);
            c.add("intertwines_curvature", curv, cah::INTERTWINE_TOLERANCE);
            if cmd == Command::IntegrateLts {
                let l1 = m1.lts(&c1)?;
                let l2 = m2.lts(&c2)?;
                let mm = l2.basis_matrix().transpose() * a.ambient() * l1.basis_matrix();
                c.add("lts_morphism", l1.morphism_residual(&l2, &mm), cah::LTS_TOLERANCE);
            }
            for y in s.targets.iter().chain(s.paths.iter().flat_map(|p| p.waypoints.iter().chain(std::iter::once(&p.target)))) {
                member(&m1, &Some(y.clone()))?;
            }
            if c.out.iter().any(|k| !k.pass) {
                // Integration preconditions fail: report the rejection without integrating.
                return Ok(Outcome { checks: c.out, data, trace });
            }
            let f = match cmd {
                Command::IntegrateLts => cah::integrate_lts_morphism(&m1, &m2, &a)?,
                _ => cah::integrate_global(&c1, &c2, &a)?,
            };
            let mut images = Vec::new();
            for t in &s.targets {
                images.push(f.apply(&vector(t))?.as_slice().to_vec());
            }
            let mut spread: f64 = 0.0;
            let mut path_images = Vec::new();
            for p in &s.paths {
                let y = vector(&p.target);
                let ways: Vec<Vector> = p.waypoints.iter().map(|w| vector(w)).collect();
                let via = f.apply_via(&ways, &y)?;
                let direct = f.apply(&y).ok();
                if let Some(d) = direct {
                    spread = spread.max((&d - &via).norm());
                }
                path_images.push(via.as_slice().to_vec());
            }
            // Paths sharing a target must agree.
            for (i, p) in s.paths.iter().enumerate() {
                for (j, q) in s.paths.iter().enumerate().skip(i + 1) {
                    if p.target == q.target {
                        spread = spread.max((vector(&path_images[i]) - vector(&path_images[j])).norm());
                    }
                }
            }
            if !s.paths.is_empty() {
                c.add("path_independence", spread, 1e-5);
            }
            let tf = f.map.clone();
            let fmap = |x: &Vector| f.apply(x);
            let dm = m1.charted.differential_matrix(&m2.charted, &fmap, &tf.source.ambient)?;
            c.add("tangent_at_base", (dm - &tf.matrix).amax(), 1e-5);
            if cmd == Command::IntegrateLts {
                let r = cah::verify_morphism(&m1, &m2, &fmap, s.samples.min(8), s.seed)?;
                c.add("morphism", r, 1e-4);
            }
            data = serde_json::json!({ "radius": f.radius, "images": images, "path_images": path_images });
        }
    }
    Ok(Outcome { checks: c.out, data, trace })
}

/// Carried vector along the geodesic on the trace grid, from the generic curve transport.
fn lift_rows(conn: &ConnectionModel, x: &Point, v: &TangentVector, w: &Vector, t: f64) -> Result<Vec<Vector>, Failure> {
    let steps = cartan::ode::step_count(conn.steps, t);
    let curve = |s: f64| conn.integrate_geodesic(&x.ambient, &v.ambient, s, &[], None).map(|e| e.point);
    let wv = TangentVector { base: x.clone(), ambient: w.clone() };
    let lift = conn.transport_lift(&curve, 0.0, t, &wv, steps)?;
    Ok(lift.vectors)
}

/// Rows `t, point…, vector…`.
fn csv(rows: &[cartan::connection::TraceRow], vectors: Option<&[Vector]>) -> String {
    let mut out = String::new();
    let dim = rows.first().map_or(0, |r| r.point.len());
    out.push('t');
    for i in 0..dim {
        let _ = write!(out, ",x{i}");
    }
    for i in 0..dim {
        let _ = write!(out, ",v{i}");
    }
    out.push('\n');
    for (k, r) in rows.iter().enumerate() {
        let vec = vectors.and_then(|v| v.get(k)).unwrap_or(&r.vector);
        let _ = write!(out, "{}", r.t);
        for z in r.point.iter().chain(vec.iter()) {
            let _ = write!(out, ",{z}");
        }
        out.push('\n');
    }
    out
}

pub fn check_output_path(path: &str) -> anyhow::Result<()> {
    let p = std::path::Path::new(path);
    let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(std::path::Path::new("."));
    if !dir.is_dir() {
        bail!("output directory {} does not exist", dir.display());
    }
    Ok(())
}

/// Writes `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &str, contents: &str) -> anyhow::Result<()> {
    use std::io::Write;
    let p = std::path::Path::new(path);
    let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(std::path::Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(p).with_context(|| format!("writing {}", p.display()))?;
    Ok(())
}
