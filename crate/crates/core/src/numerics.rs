//! Dense linear algebra for the rest of the crate.
//!
//! Everything here works on a single row-major [`Matrix`] type and plain
//! `&[f64]` vectors. General matrix products go through `matrixmultiply`;
//! the decompositions (one-sided Jacobi SVD, closed-form 2x2 eigenproblems,
//! Gram-Schmidt projections) are implemented directly.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};

/// Tolerances used by the decompositions in this module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericsConfig {
    /// Jacobi rotation threshold on |g_i.g_j| / (|g_i| |g_j|).
    pub svd_tol: f64,
    pub svd_max_sweeps: usize,
    /// Minimal ratio R_kk / max R_jj accepted by `project_onto_span`.
    pub span_conditioning: f64,
    /// Smallest eigenvalue accepted as positive by `spd_sqrt2`.
    pub spd_min_eigenvalue: f64,
    /// Relative symmetry tolerance for `spd_sqrt2`.
    pub symmetry_tol: f64,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            svd_tol: 1e-15,
            svd_max_sweeps: 80,
            span_conditioning: 1e-10,
            spd_min_eigenvalue: 1e-12,
            symmetry_tol: 1e-12,
        }
    }
}

/// Dense row-major matrix of `f64`. Serialized as a list of rows.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        (0..m.rows).map(|i| m.row(i).to_vec()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(shape("Matrix rows", cols, bad.len()));
        }
        let n = rows.len();
        Matrix::from_vec(n, cols, rows.into_iter().flatten().collect())
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row = &self.row(i)[..self.cols.min(8)];
            writeln!(f, "  {row:?}{}", if self.cols > 8 { " ..." } else { "" })?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape(
                "Matrix::from_vec",
                format!("{} entries", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.as_ref().len(), c, "ragged rows");
            data.extend_from_slice(row.as_ref());
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// `a b^T`.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        Self::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns<C: AsRef<[f64]>>(cols: &[C]) -> Self {
        let c = cols.len();
        let r = cols.first().map_or(0, |col| col.as_ref().len());
        Self::from_fn(r, c, |i, j| cols[j].as_ref()[i])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[f64]) {
        for i in 0..self.rows {
            self[(i, j)] = v[i];
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut m = self.clone();
        m.scale(alpha);
        m
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += alpha * y;
        }
    }

    /// `self += alpha * a b^T`.
    pub fn add_outer(&mut self, alpha: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            let f = alpha * ai;
            if f == 0.0 {
                continue;
            }
            for (x, &bj) in self.row_mut(i).iter_mut().zip(b) {
                *x += f * bj;
            }
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        let mut m = self.clone();
        m.axpy(-1.0, other);
        m
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        let mut m = self.clone();
        m.axpy(1.0, other);
        m
    }

    /// `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self^T * v`.
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                axpy(vi, self.row(i), &mut out);
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(self.rows, other.cols);
        gemm(1.0, self, false, other, false, 0.0, &mut c);
        c
    }

    /// Relative Frobenius distance `|self - other| / max(|other|, tiny)`.
    pub fn rel_diff(&self, other: &Matrix) -> f64 {
        self.sub(other).frobenius_norm() / other.frobenius_norm().max(f64::MIN_POSITIVE)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, with `op` an optional transpose.
pub fn gemm(alpha: f64, a: &Matrix, ta: bool, b: &Matrix, tb: bool, beta: f64, c: &mut Matrix) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "gemm inner dimension");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.scale(beta);
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides and extents describe the owned buffers exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorize the reduction.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b)).max(f64::MIN_POSITIVE)
}

/// Thin SVD `m = U diag(S) V^T` with `k = min(rows, cols)` triplets.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Descending, non-negative.
    pub singular_values: Vec<f64>,
    /// `rows x k`, orthonormal columns.
    pub left_vectors: Matrix,
    /// `cols x k`, orthonormal columns.
    pub right_vectors: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.singular_values.len();
        let mut us = self.left_vectors.clone();
        for i in 0..us.rows() {
            for j in 0..k {
                us[(i, j)] *= self.singular_values[j];
            }
        }
        let mut out = Matrix::zeros(self.left_vectors.rows(), self.right_vectors.rows());
        gemm(1.0, &us, false, &self.right_vectors, true, 0.0, &mut out);
        out
    }

    pub fn left(&self, j: usize) -> Vec<f64> {
        self.left_vectors.column(j)
    }

    pub fn right(&self, j: usize) -> Vec<f64> {
        self.right_vectors.column(j)
    }
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    svd_with(m, &NumericsConfig::default())
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd_with(m: &Matrix, cfg: &NumericsConfig) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::NonFinite {
            context: "svd input",
            step: None,
        });
    }
    if m.rows < m.cols {
        let t = svd_with(&m.transpose(), cfg)?;
        return Ok(SvdResult {
            singular_values: t.singular_values,
            left_vectors: t.right_vectors,
            right_vectors: t.left_vectors,
        });
    }
    let (rows, cols) = (m.rows, m.cols);
    // Columns of the working matrix and of V, stored contiguously.
    let mut g: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();
    let scale = m.frobenius_norm();
    let negligible = (scale * 1e-300).max(f64::MIN_POSITIVE);
    let mut norms2: Vec<f64> = g.iter().map(|c| dot(c, c)).collect();

    let mut converged = cols < 2;
    let mut sweeps = 0;
    let mut worst = 0.0;
    while !converged {
        if sweeps == cfg.svd_max_sweeps {
            return Err(Error::SvdNoConvergence {
                sweeps,
                residual: worst,
            });
        }
        sweeps += 1;
        worst = 0.0f64;
        let mut rotated = false;
        for i in 0..cols - 1 {
            for j in i + 1..cols {
                let alpha = norms2[i];
                let beta = norms2[j];
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&g[i], &g[j]);
                let ratio = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(ratio);
                if ratio <= cfg.svd_tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (gi, gj) = pair_mut(&mut g, i, j);
                rotate(gi, gj, c, s);
                let (vi, vj) = pair_mut(&mut v, i, j);
                rotate(vi, vj, c, s);
                norms2[i] = dot(&g[i], &g[i]);
                norms2[j] = dot(&g[j], &g[j]);
            }
        }
        converged = !rotated;
    }

    let mut order: Vec<usize> = (0..cols).collect();
    let sig: Vec<f64> = norms2.iter().map(|x| x.sqrt()).collect();
    order.sort_by(|&a, &b| sig[b].total_cmp(&sig[a]));

    let mut singular_values = Vec::with_capacity(cols);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let rank_floor = sig.iter().cloned().fold(0.0, f64::max) * (rows as f64) * f64::EPSILON;
    for &k in &order {
        let s = sig[k];
        singular_values.push(s);
        if s > rank_floor && s > 0.0 {
            u_cols.push(g[k].iter().map(|x| x / s).collect());
        } else {
            u_cols.push(Vec::new());
        }
        v_cols.push(v[k].clone());
    }
    complete_orthonormal(&mut u_cols, rows);
    Ok(SvdResult {
        singular_values,
        left_vectors: Matrix::from_columns(&u_cols),
        right_vectors: Matrix::from_columns(&v_cols),
    })
}

fn pair_mut(v: &mut [Vec<f64>], i: usize, j: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    debug_assert!(i < j);
    let (a, b) = v.split_at_mut(j);
    (&mut a[i], &mut b[0])
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Replaces empty entries with unit vectors orthogonal to all others.
fn complete_orthonormal(cols: &mut [Vec<f64>], dim: usize) {
    let mut candidate = 0;
    for k in 0..cols.len() {
        if !cols[k].is_empty() {
            continue;
        }
        loop {
            assert!(candidate < dim, "cannot complete orthonormal set");
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for other in cols.iter().filter(|c| !c.is_empty()) {
                    let p = dot(other, &e);
                    axpy(-p, other, &mut e);
                }
            }
            if normalize(&mut e) > 1e-6 {
                cols[k] = e;
                break;
            }
        }
    }
}

/// Outcome of the closed-form 2x2 eigenproblem.
#[derive(Debug, Clone, PartialEq)]
pub enum Eig2 {
    /// Real eigenvalues in descending order with unit-norm eigenvector columns.
    Real {
        values: (f64, f64),
        modal: Matrix,
    },
    Complex {
        re: f64,
        im: f64,
    },
    /// Repeated eigenvalue with a single eigendirection.
    Defective {
        value: f64,
    },
}

impl Eig2 {
    pub fn real(&self) -> Option<((f64, f64), &Matrix)> {
        match self {
            Eig2::Real { values, modal } => Some((*values, modal)),
            _ => None,
        }
    }
}

pub fn eig2(m: &Matrix) -> Result<Eig2> {
    if m.rows != 2 || m.cols != 2 {
        return Err(shape("eig2", "2x2", format!("{}x{}", m.rows, m.cols)));
    }
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let scale = m.max_abs();
    let half_tr = 0.5 * (a + d);
    let half_diff = 0.5 * (a - d);
    let disc = half_diff * half_diff + b * c;
    let tiny = 1e-14 * scale * scale;
    if disc < -tiny {
        return Ok(Eig2::Complex {
            re: half_tr,
            im: (-disc).sqrt(),
        });
    }
    if disc.abs() <= tiny {
        if b.abs() <= 1e-14 * scale && c.abs() <= 1e-14 * scale {
            return Ok(Eig2::Real {
                values: (half_tr, half_tr),
                modal: Matrix::identity(2),
            });
        }
        if disc.abs() <= f64::EPSILON * f64::EPSILON * scale * scale {
            return Ok(Eig2::Defective { value: half_tr });
        }
    }
    let root = disc.max(0.0).sqrt();
    let l1 = half_tr + root;
    let l2 = half_tr - root;
    let v1 = eigvec2(a, b, c, d, l1, [1.0, 0.0]);
    let v2 = eigvec2(a, b, c, d, l2, [0.0, 1.0]);
    Ok(Eig2::Real {
        values: (l1, l2),
        modal: Matrix::from_columns(&[v1, v2]),
    })
}

fn eigvec2(a: f64, b: f64, c: f64, d: f64, l: f64, fallback: [f64; 2]) -> Vec<f64> {
    let x = [b, l - a];
    let y = [l - d, c];
    let (nx, ny) = (x[0].hypot(x[1]), y[0].hypot(y[1]));
    let mut v = if nx >= ny { x.to_vec() } else { y.to_vec() };
    if nx.max(ny) == 0.0 {
        v = fallback.to_vec();
    }
    normalize(&mut v);
    // Sign convention: the largest-magnitude component is positive.
    let k = if v[0].abs() >= v[1].abs() { 0 } else { 1 };
    if v[k] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Inverse of a 2x2 matrix; `None` when singular.
pub fn inv2(m: &Matrix) -> Option<Matrix> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some(Matrix::from_rows(&[
        [m[(1, 1)] / det, -m[(0, 1)] / det],
        [-m[(1, 0)] / det, m[(0, 0)] / det],
    ]))
}

/// Matrix power by repeated squaring.
pub fn mat_pow(m: &Matrix, q: u32) -> Result<Matrix> {
    if !m.is_square() {
        return Err(shape("mat_pow", "square matrix", format!("{}x{}", m.rows, m.cols)));
    }
    let mut result = Matrix::identity(m.rows);
    let mut base = m.clone();
    let mut e = q;
    while e > 0 {
        if e & 1 == 1 {
            result = result.matmul(&base);
        }
        e >>= 1;
        if e > 0 {
            base = base.matmul(&base);
        }
    }
    if !result.is_finite() {
        return Err(Error::NonFinite {
            context: "mat_pow",
            step: None,
        });
    }
    Ok(result)
}

/// Least-squares decomposition of `v` into a component inside `span(basis)`
/// and one orthogonal to it.
pub fn project_onto_span(v: &[f64], basis: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let q = orthonormal_basis(basis, NumericsConfig::default().span_conditioning)?;
    Ok(project_with_orthonormal(v, &q))
}

/// Modified Gram-Schmidt with one reorthogonalization pass. Fails when a
/// basis vector is (numerically) dependent on the previous ones.
pub fn orthonormal_basis(basis: &[Vec<f64>], threshold: f64) -> Result<Vec<Vec<f64>>> {
    let max_norm = basis.iter().map(|b| norm(b)).fold(0.0, f64::max);
    if max_norm == 0.0 {
        return Err(Error::DegenerateBasis {
            conditioning: 0.0,
            threshold,
        });
    }
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for b in basis {
        let mut w = b.clone();
        for _ in 0..2 {
            for qi in &q {
                let p = dot(qi, &w);
                axpy(-p, qi, &mut w);
            }
        }
        let r = norm(&w);
        let conditioning = r / max_norm;
        if conditioning < threshold {
            return Err(Error::DegenerateBasis {
                conditioning,
                threshold,
            });
        }
        w.iter_mut().for_each(|x| *x /= r);
        q.push(w);
    }
    Ok(q)
}

pub fn project_with_orthonormal(v: &[f64], q: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let mut parallel = vec![0.0; v.len()];
    for qi in q {
        axpy(dot(qi, v), qi, &mut parallel);
    }
    let orthogonal = v.iter().zip(&parallel).map(|(a, b)| a - b).collect();
    (parallel, orthogonal)
}

/// Principal square root of a symmetric positive-definite 2x2 matrix, using
/// `sqrt(S) = (S + sqrt(det S) I) / sqrt(tr S + 2 sqrt(det S))`.
pub fn spd_sqrt2(sigma: &Matrix) -> Result<Matrix> {
    let cfg = NumericsConfig::default();
    if sigma.rows != 2 || sigma.cols != 2 {
        return Err(shape("spd_sqrt2", "2x2", format!("{}x{}", sigma.rows, sigma.cols)));
    }
    let (a, b, c, d) = (sigma[(0, 0)], sigma[(0, 1)], sigma[(1, 0)], sigma[(1, 1)]);
    if (b - c).abs() > cfg.symmetry_tol * sigma.max_abs().max(1.0) {
        return Err(Error::NotSpd(format!("asymmetric off-diagonal {b} vs {c}")));
    }
    let off = 0.5 * (b + c);
    let half_tr = 0.5 * (a + d);
    let root = (0.25 * (a - d) * (a - d) + off * off).sqrt();
    let lmin = half_tr - root;
    if !(lmin > cfg.spd_min_eigenvalue) {
        return Err(Error::NotSpd(format!("smallest eigenvalue {lmin:.3e}")));
    }
    let sdet = (a * d - off * off).sqrt();
    let t = (a + d + 2.0 * sdet).sqrt();
    Ok(Matrix::from_rows(&[
        [(a + sdet) / t, off / t],
        [off / t, (d + sdet) / t],
    ]))
}

/// Eigenvalues (descending) and eigenvectors of a symmetric matrix obtained
/// from its SVD: `|lambda_i| = sigma_i` and the sign is read from `u_i . v_i`.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !m.is_square() {
        return Err(shape("symmetric_eigen", "square", format!("{}x{}", m.rows, m.cols)));
    }
    let s = svd(m)?;
    let k = s.singular_values.len();
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..k)
        .map(|j| {
            let u = s.left(j);
            let v = s.right(j);
            let sign = if dot(&u, &v) < 0.0 { -1.0 } else { 1.0 };
            (sign * s.singular_values[j], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let values = pairs.iter().map(|p| p.0).collect();
    let vectors = Matrix::from_columns(&pairs.iter().map(|p| p.1.clone()).collect::<Vec<_>>());
    Ok((values, vectors))
}

/// Solves `a x = b` for square `a` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows;
    if !a.is_square() || b.len() != n {
        return Err(shape("solve", format!("{n}x{n} system"), format!("{}x{} / {}", a.rows, a.cols, b.len())));
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[(i, k)].abs().total_cmp(&m[(j, k)].abs()))
            .unwrap();
        if m[(p, k)].abs() <= 1e-13 * scale {
            return Err(Error::Degenerate {
                analysis: "linear solve",
                reason: format!("pivot {:.3e} at column {k}", m[(p, k)]),
            });
        }
        if p != k {
            for j in 0..n {
                let tmp = m[(k, j)];
                m[(k, j)] = m[(p, j)];
                m[(p, j)] = tmp;
            }
            x.swap(k, p);
        }
        for i in k + 1..n {
            let f = m[(i, k)] / m[(k, k)];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                m[(i, j)] -= f * m[(k, j)];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= m[(k, j)] * x[j];
        }
        x[k] = s / m[(k, k)];
    }
    Ok(x)
}

/// Pairwise (tree) summation; deterministic for a given ordering.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}
