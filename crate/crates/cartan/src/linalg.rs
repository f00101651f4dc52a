use nalgebra::DMatrix;

use crate::numjet::Vector;

/// Relative threshold below which singular values count as zero.
pub const RANK_TOL: f64 = 1e-8;

pub fn unit(n: usize, i: usize) -> Vector {
    let mut e = Vector::zeros(n);
    e[i] = 1.0;
    e
}

/// Orthonormal basis (as columns) of the row space of `m` and its rank.
pub fn row_space(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let cols = m.ncols();
    if m.nrows() == 0 || cols == 0 {
        return (DMatrix::zeros(cols, 0), 0);
    }
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > RANK_TOL * smax.max(1.0)).collect();
    let mut basis = DMatrix::zeros(cols, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        basis.set_column(j, &vt.row(i).transpose());
    }
    (basis, keep.len())
}

/// Moore-Penrose pseudo-inverse.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.pseudo_inverse(RANK_TOL * smax.max(f64::MIN_POSITIVE)).expect("svd computed with u and v")
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = m.clone().svd(false, false).singular_values;
    if s.is_empty() {
        return 1.0;
    }
    s.max() / s.min()
}

/// Modified Gram-Schmidt with one reorthogonalization pass, keeping at most
/// `limit` columns whose residual norm exceeds `tol`.
pub fn gram_schmidt(candidates: impl IntoIterator<Item = Vector>, limit: usize, tol: f64) -> Vec<Vector> {
    let mut out: Vec<Vector> = Vec::with_capacity(limit);
    for mut c in candidates {
        if out.len() == limit {
            break;
        }
        for _ in 0..2 {
            for q in &out {
                let p = q.dot(&c);
                c.axpy(-p, q, 1.0);
            }
        }
        let n = c.norm();
        if n > tol {
            out.push(c / n);
        }
    }
    out
}

pub fn columns(vs: &[Vector], rows: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, vs.len());
    for (j, v) in vs.iter().enumerate() {
        m.set_column(j, v);
    }
    m
}

/// Row-major flattening of a square matrix.
pub fn flatten(m: &DMatrix<f64>) -> Vector {
    Vector::from_iterator(m.nrows() * m.ncols(), m.transpose().iter().copied())
}

/// Inverse of [`flatten`].
pub fn unflatten(v: &Vector, n: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, v.as_slice())
}
