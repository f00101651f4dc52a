//! Finite-difference jets of maps known only through coordinate evaluation.
//!
//! Every derivative in the crate is computed here. Pure directional
//! derivatives use central stencils at steps `h` and `h/2` combined by one
//! Richardson step; mixed derivatives are recovered from pure ones by
//! polarization, so they are exactly symmetric in their arguments.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{GeomError, Result};

pub type Vector = DVector<f64>;

type EvalFn = dyn Fn(&Vector) -> Vector + Send + Sync;

/// A smooth map between coordinate spaces with a characteristic length.
#[derive(Clone)]
pub struct SmoothMap {
    domain_dim: usize,
    codomain_dim: usize,
    scale: f64,
    eval: Arc<EvalFn>,
}

impl std::fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothMap")
            .field("domain_dim", &self.domain_dim)
            .field("codomain_dim", &self.codomain_dim)
            .field("scale", &self.scale)
            .finish()
    }
}

impl SmoothMap {
    pub fn new<F>(domain_dim: usize, codomain_dim: usize, scale: f64, f: F) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        assert!(scale > 0.0, "scale must be positive");
        SmoothMap { domain_dim, codomain_dim, scale, eval: Arc::new(f) }
    }

    pub fn domain_dim(&self) -> usize {
        self.domain_dim
    }

    pub fn codomain_dim(&self) -> usize {
        self.codomain_dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Evaluates the map, rejecting non-finite output.
    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.domain_dim {
            return Err(GeomError::DimensionMismatch { expected: self.domain_dim, got: x.len() });
        }
        checked(&*self.eval, x)
    }

    /// Unchecked evaluation; may contain non-finite entries.
    pub fn eval_raw(&self, x: &Vector) -> Vector {
        (self.eval)(x)
    }

    /// A zero direction short-circuits to zero without evaluating the map.
    pub fn directional_derivative(&self, x: &Vector, dirs: &[&Vector]) -> Result<Vector> {
        if dirs.iter().any(|d| d.iter().all(|v| *v == 0.0)) && !dirs.is_empty() && dirs.len() <= 3 {
            return Ok(Vector::zeros(self.codomain_dim));
        }
        derivative(&*self.eval, x, dirs, self.scale)
    }

    pub fn jet(&self, x: &Vector, order: usize) -> Result<Jet> {
        jet(&*self.eval, x, order, self.scale)
    }
}

/// Outer Richardson step for a stencil of the given derivative order.
pub fn step(order: usize, scale: f64) -> f64 {
    scale * f64::EPSILON.powf(1.0 / (4 + order) as f64)
}

fn checked<F: Fn(&Vector) -> Vector + ?Sized>(f: &F, x: &Vector) -> Result<Vector> {
    let y = f(x);
    if y.iter().all(|v| v.is_finite()) {
        Ok(y)
    } else {
        Err(GeomError::Evaluation { input: x.as_slice().to_vec() })
    }
}

fn probe<F: Fn(&Vector) -> Vector + ?Sized>(f: &F, x: &Vector, c: &Vector, s: f64) -> Result<Vector> {
    checked(f, &(x + c * s))
}

/// Pure k-th derivative along a unit direction, one Richardson level.
fn pure<F>(f: &F, x: &Vector, c: &Vector, k: usize, h: f64, f0: &Vector) -> Result<Vector>
where
    F: Fn(&Vector) -> Vector + ?Sized,
{
    match k {
        1 => {
            let d = |s: f64| -> Result<Vector> { Ok((probe(f, x, c, s)? - probe(f, x, c, -s)?) / (2.0 * s)) };
            let coarse = d(h)?;
            let fine = d(0.5 * h)?;
            Ok((fine * 4.0 - coarse) / 3.0)
        }
        2 => {
            let d = |s: f64| -> Result<Vector> { Ok((probe(f, x, c, s)? + probe(f, x, c, -s)? - f0 * 2.0) / (s * s)) };
            let coarse = d(h)?;
            let fine = d(0.5 * h)?;
            Ok((fine * 4.0 - coarse) / 3.0)
        }
        3 => {
            let p1 = probe(f, x, c, h)?;
            let m1 = probe(f, x, c, -h)?;
            let p2 = probe(f, x, c, 2.0 * h)?;
            let m2 = probe(f, x, c, -2.0 * h)?;
            let ph = probe(f, x, c, 0.5 * h)?;
            let mh = probe(f, x, c, -0.5 * h)?;
            let coarse = (&p2 - &p1 * 2.0 + &m1 * 2.0 - &m2) / (2.0 * h * h * h);
            let hh = 0.5 * h;
            let fine = (&p1 - &ph * 2.0 + &mh * 2.0 - &m1) / (2.0 * hh * hh * hh);
            Ok((fine * 4.0 - coarse) / 3.0)
        }
        _ => unreachable!("order checked by caller"),
    }
}

/// `|c|^k` times the pure derivative along `c / |c|`.
fn scaled_pure<F>(f: &F, x: &Vector, c: &Vector, k: usize, scale: f64, f0: &Vector) -> Result<Vector>
where
    F: Fn(&Vector) -> Vector + ?Sized,
{
    let n = c.norm();
    if n == 0.0 {
        return Ok(Vector::zeros(f0.len()));
    }
    let unit = c / n;
    Ok(pure(f, x, &unit, k, step(k, scale), f0)? * n.powi(k as i32))
}

/// Mixed directional derivative of order `dirs.len()` (1 to 3).
pub fn derivative<F>(f: &F, x: &Vector, dirs: &[&Vector], scale: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> Vector + ?Sized,
{
    let k = dirs.len();
    if !(1..=3).contains(&k) {
        return Err(GeomError::InvalidArgument(format!("derivative order {k} not in 1..=3")));
    }
    if let Some(d) = dirs.iter().find(|d| d.len() != x.len()) {
        return Err(GeomError::DimensionMismatch { expected: x.len(), got: d.len() });
    }
    let f0 = checked(f, x)?;
    if dirs.iter().any(|d| d.iter().all(|v| *v == 0.0)) {
        return Ok(Vector::zeros(f0.len()));
    }
    if dirs.iter().all(|d| *d == dirs[0]) {
        return scaled_pure(f, x, dirs[0], k, scale, &f0);
    }
    match k {
        2 => {
            let plus = scaled_pure(f, x, &(dirs[0] + dirs[1]), 2, scale, &f0)?;
            let minus = scaled_pure(f, x, &(dirs[0] - dirs[1]), 2, scale, &f0)?;
            Ok((plus - minus) * 0.25)
        }
        3 => {
            let mut acc = Vector::zeros(f0.len());
            for (s2, s3) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let c = dirs[0] + dirs[1] * s2 + dirs[2] * s3;
                acc += scaled_pure(f, x, &c, 3, scale, &f0)? * (s2 * s3);
            }
            Ok(acc / 24.0)
        }
        _ => unreachable!(),
    }
}

/// First derivative of a curve `t -> g(t)`.
pub fn curve_derivative<G>(g: G, t: f64, scale: f64) -> Result<Vector>
where
    G: Fn(f64) -> Vector,
{
    let f = |x: &Vector| g(x[0]);
    derivative(&f, &Vector::from_element(1, t), &[&Vector::from_element(1, 1.0)], scale)
}

/// Multilinear array with vector values, stored densely in row-major slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct Multilinear {
    pub dim: usize,
    pub order: usize,
    pub entries: Vec<Vector>,
}

impl Multilinear {
    pub fn zeros(dim: usize, order: usize, codim: usize) -> Self {
        Multilinear { dim, order, entries: vec![Vector::zeros(codim); dim.pow(order as u32)] }
    }

    fn index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> &Vector {
        &self.entries[self.index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: Vector) {
        let i = self.index(idx);
        self.entries[i] = v;
    }

    /// Contracts every slot with the given vectors.
    pub fn apply(&self, args: &[&Vector]) -> Vector {
        assert_eq!(args.len(), self.order);
        let codim = self.entries.first().map_or(0, |e| e.len());
        let mut out = Vector::zeros(codim);
        for (flat, e) in self.entries.iter().enumerate() {
            let mut rem = flat;
            let mut w = 1.0;
            for slot in (0..self.order).rev() {
                w *= args[slot][rem % self.dim];
                rem /= self.dim;
            }
            if w != 0.0 {
                out.axpy(w, e, 1.0);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Jet {
    pub value: Vector,
    pub d1: DMatrix<f64>,
    pub d2: Option<Multilinear>,
    pub d3: Option<Multilinear>,
}

/// Full jet up to `order` on the standard basis.
pub fn jet<F>(f: &F, x: &Vector, order: usize, scale: f64) -> Result<Jet>
where
    F: Fn(&Vector) -> Vector + ?Sized,
{
    if !(1..=3).contains(&order) {
        return Err(GeomError::InvalidArgument(format!("jet order {order} not in 1..=3")));
    }
    let n = x.len();
    let value = checked(f, x)?;
    let m = value.len();
    let basis: Vec<Vector> = (0..n)
        .map(|i| {
            let mut e = Vector::zeros(n);
            e[i] = 1.0;
            e
        })
        .collect();
    let mut d1 = DMatrix::zeros(m, n);
    for (i, e) in basis.iter().enumerate() {
        d1.set_column(i, &derivative(f, x, &[e], scale)?);
    }
    let d2 = if order >= 2 {
        let mut t = Multilinear::zeros(n, 2, m);
        for i in 0..n {
            for j in i..n {
                let v = derivative(f, x, &[&basis[i], &basis[j]], scale)?;
                t.set(&[j, i], v.clone());
                t.set(&[i, j], v);
            }
        }
        Some(t)
    } else {
        None
    };
    let d3 = if order >= 3 {
        let mut t = Multilinear::zeros(n, 3, m);
        for i in 0..n {
            for j in i..n {
                for k in j..n {
                    let v = derivative(f, x, &[&basis[i], &basis[j], &basis[k]], scale)?;
                    for p in [[i, j, k], [i, k, j], [j, i, k], [j, k, i], [k, i, j], [k, j, i]] {
                        t.set(&p, v.clone());
                    }
                }
            }
        }
        Some(t)
    } else {
        None
    };
    Ok(Jet { value, d1, d2, d3 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn square_first_derivative() {
        let f = SmoothMap::new(1, 1, 1.0, |x| v(&[x[0] * x[0]]));
        let d = f.directional_derivative(&v(&[3.0]), &[&v(&[1.0])]).unwrap();
        assert_abs_diff_eq!(d[0], 6.0, epsilon = 1e-10);
    }

    #[test]
    fn sine_third_derivative() {
        let f = SmoothMap::new(1, 1, 1.0, |x| v(&[x[0].sin()]));
        let e = v(&[1.0]);
        let d = f.directional_derivative(&v(&[0.7]), &[&e, &e, &e]).unwrap();
        assert_abs_diff_eq!(d[0], -(0.7f64).cos(), epsilon = 1e-6);
    }

    #[test]
    fn bilinear_second_derivative_is_constant() {
        // f(x) = x0 * x1 + 2 x1 x2
        let f = SmoothMap::new(3, 1, 1.0, |x| v(&[x[0] * x[1] + 2.0 * x[1] * x[2]]));
        let a = v(&[1.0, -2.0, 0.5]);
        let b = v(&[0.3, 0.1, 1.0]);
        let expect = a[0] * b[1] + a[1] * b[0] + 2.0 * (a[1] * b[2] + a[2] * b[1]);
        for x in [v(&[0.0, 0.0, 0.0]), v(&[1.0, 5.0, -3.0])] {
            let d = f.directional_derivative(&x, &[&a, &b]).unwrap();
            assert_abs_diff_eq!(d[0], expect, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_direction_skips_evaluation() {
        let f = SmoothMap::new(2, 1, 1.0, |_| panic!("must not evaluate"));
        let z = v(&[0.0, 0.0]);
        let d = f.directional_derivative(&v(&[1.0, 1.0]), &[&v(&[1.0, 0.0]), &z]).unwrap();
        assert_eq!(d, v(&[0.0]));
    }

    #[test]
    fn nonfinite_reports_input() {
        let f = SmoothMap::new(1, 1, 1.0, |x| v(&[1.0 / x[0]]));
        match f.eval(&v(&[0.0])) {
            Err(GeomError::Evaluation { input }) => assert_eq!(input, vec![0.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identity_and_affine_jets() {
        let id = SmoothMap::new(3, 3, 1.0, |x| x.clone());
        let j = id.jet(&v(&[0.2, -1.0, 4.0]), 1).unwrap();
        assert!((j.d1 - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);

        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let b = v(&[0.1, 0.2]);
        let aff = SmoothMap::new(3, 2, 1.0, move |x| &a * x + &b);
        let j = aff.jet(&v(&[0.3, 0.3, -0.7]), 3).unwrap();
        assert!(j.d2.unwrap().entries.iter().all(|e| e.amax() < 1e-9));
        assert!(j.d3.unwrap().entries.iter().all(|e| e.amax() < 1e-6));
    }

    #[test]
    fn jet_is_symmetric() {
        let f = |x: &Vector| v(&[(x[0] * x[1]).sin() + x[2].exp() * x[0], x[1].powi(3)]);
        let j = jet(&f, &v(&[0.4, -0.3, 0.2]), 3, 1.0).unwrap();
        let d2 = j.d2.unwrap();
        let d3 = j.d3.unwrap();
        for i in 0..3 {
            for k in 0..3 {
                assert_eq!(d2.get(&[i, k]), d2.get(&[k, i]));
                for l in 0..3 {
                    assert_eq!(d3.get(&[i, k, l]), d3.get(&[l, i, k]));
                }
            }
        }
    }

    #[test]
    fn multilinear_apply_matches_entries() {
        let f = |x: &Vector| v(&[x[0] * x[0] * x[1]]);
        let j = jet(&f, &v(&[1.0, 2.0]), 2, 1.0).unwrap();
        let d2 = j.d2.unwrap();
        let a = v(&[1.0, 0.5]);
        let b = v(&[-1.0, 2.0]);
        let direct = derivative(&f, &v(&[1.0, 2.0]), &[&a, &b], 1.0).unwrap();
        assert_abs_diff_eq!(d2.apply(&[&a, &b])[0], direct[0], epsilon = 1e-8);
    }
}
