//! Dense double-precision linear algebra and numerical helpers.
//!
//! Everything here is a pure function over immutable inputs. Vectors are plain
//! `&[f64]` slices; [`Matrix`] is a row-major 2-D container that refuses
//! non-finite entries at construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, NormSite, Result};

/// Norms below this are treated as degenerate.
pub const NORM_EPS: f64 = 1e-12;

/// Default step for [`finite_diff_grad`].
pub const DEFAULT_FD_STEP: f64 = 1e-5;

const SYMMETRY_TOL: f64 = 1e-10;
const JACOBI_OFF_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{rows}x{cols} matrix needs {} entries, got {}", rows * cols, data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry ({}, {})", pos / cols.max(1), pos % cols.max(1))));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero, and a 0-column matrix has no meaningful rows anyway
        self.data.chunks_exact(self.cols.max(1)).take(if self.cols == 0 { 0 } else { self.rows })
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!("cannot multiply {}x{} by {}x{}", self.rows, self.cols, other.rows, other.cols)));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n.is_nan() || n < NORM_EPS {
        return Err(Error::NearZeroNorm(NormSite::Vector));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if !(na >= NORM_EPS && nb >= NORM_EPS) {
        return Err(Error::NearZeroNorm(NormSite::Vector));
    }
    Ok(cosine_with_norms(a, b, na, nb))
}

#[inline]
pub(crate) fn cosine_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Accumulates `upstream * d cos(a, b)` into `grad_a` and `grad_b`.
///
/// `cos` is the value previously computed for this pair with the given norms.
#[allow(clippy::too_many_arguments)]
pub(crate) fn cosine_backward(a: &[f64], b: &[f64], na: f64, nb: f64, cos: f64, upstream: f64, grad_a: &mut [f64], grad_b: &mut [f64]) {
    let inv = 1.0 / (na * nb);
    let ca = cos / (na * na);
    let cb = cos / (nb * nb);
    for k in 0..a.len() {
        grad_a[k] += upstream * (b[k] * inv - ca * a[k]);
        grad_b[k] += upstream * (a[k] * inv - cb * b[k]);
    }
}

/// Backpropagates through `y = x / ||x||` given `y`, `||x||` and `dL/dy`.
pub(crate) fn normalize_backward(y: &[f64], x_norm: f64, d_y: &[f64]) -> Vec<f64> {
    let proj = dot(y, d_y);
    y.iter().zip(d_y).map(|(&yi, &gi)| (gi - yi * proj) / x_norm).collect()
}

/// Numerically stable `log Σ exp(x_i)`.
pub fn log_sum_exp(xs: &[f64]) -> Result<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !max.is_finite() {
        return Err(Error::NonFinite("log_sum_exp input".into()));
    }
    if xs.len() == 1 {
        return Ok(xs[0]);
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Softmax of `xs` into a fresh vector. `xs` must be non-empty and finite.
pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Eigenvalues of a symmetric matrix in descending order, by cyclic Jacobi rotations.
///
/// Iterates until the off-diagonal Frobenius norm drops below `1e-12`, or below
/// machine precision relative to the matrix norm when the matrix is large enough
/// that the absolute target is out of reach.
pub fn sym_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::ShapeMismatch(format!("eigenvalues need a square matrix, got {}x{}", n, m.cols())));
    }
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }

    let mut a = m.clone();
    // symmetrize exactly so rotations act on a truly symmetric matrix
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    let floor = f64::EPSILON * a.frobenius_norm();

    let off_norm = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a.get(i, j) * a.get(i, j);
                }
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = off_norm(&a);
        if off < JACOBI_OFF_TOL || off <= floor {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
            }
        }
    }
    if !converged {
        let off = off_norm(&a);
        if !(off < JACOBI_OFF_TOL || off <= floor) {
            return Err(Error::NoConvergence(JACOBI_MAX_SWEEPS));
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    Ok(eig)
}

/// Central-difference gradient of `f` at `theta`.
pub fn finite_diff_grad<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::ConfigInvalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFiniteEvaluation(i));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim)
    }

    proptest! {
        #[test]
        fn normalized_has_unit_norm(v in vec_strategy(6)) {
            prop_assume!(norm(&v) >= NORM_EPS);
            let u = l2_normalize(&v).unwrap();
            prop_assert!((norm(&u) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(a in vec_strategy(5), b in vec_strategy(5), c in 0.01f64..100.0) {
            prop_assume!(norm(&a) > 1e-6 && norm(&b) > 1e-6);
            let ab = cosine_sim(&a, &b).unwrap();
            prop_assert!((ab - cosine_sim(&b, &a).unwrap()).abs() < 1e-12);
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            prop_assert!((ab - cosine_sim(&scaled, &b).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn lse_bounds(xs in prop::collection::vec(-50.0f64..50.0, 1..20)) {
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let l = log_sum_exp(&xs).unwrap();
            prop_assert!(l >= max);
            prop_assert!(l <= max + (xs.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn gram_eigenvalues_nonnegative(data in prop::collection::vec(-3.0f64..3.0, 12)) {
            let a = Matrix::new(4, 3, data).unwrap();
            let gram = a.transpose().matmul(&a).unwrap();
            let e = sym_eigenvalues(&gram).unwrap();
            prop_assert!(e.iter().all(|&x| x >= -1e-10));
            prop_assert!(e.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn finite_diff_exact_on_quadratics(
            q in prop::collection::vec(-1.0f64..1.0, 9),
            lin in prop::collection::vec(-1.0f64..1.0, 3),
            theta in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let f = |t: &[f64]| {
                let mut s = 0.0;
                for i in 0..3 {
                    s += lin[i] * t[i];
                    for j in 0..3 {
                        s += q[i * 3 + j] * t[i] * t[j];
                    }
                }
                s
            };
            let g = finite_diff_grad(f, &theta, DEFAULT_FD_STEP).unwrap();
            for i in 0..3 {
                let mut analytic = lin[i];
                for j in 0..3 {
                    analytic += (q[i * 3 + j] + q[j * 3 + i]) * theta[j];
                }
                prop_assert!((g[i] - analytic).abs() < 1e-8, "{} vs {}", g[i], analytic);
            }
        }
    }
}
