//! Small dense linear algebra.
//!
//! Row-major `f64` matrices, a GEMM wrapper over `matrixmultiply`, a cyclic
//! Jacobi eigen-solver for the symmetric systems that show up in motion-policy
//! fusion, and power iteration for spectral norms.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: &'static str, got: usize },
    #[error("power iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix payload length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Self::identity(n);
        m.scale(s);
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec dimension");
        (0..self.rows).map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// `selfᵀ v`
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "tr_matvec dimension");
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(false, false, self.rows, other.cols, self.cols, 1.0, &self.data, &other.data, 0.0, &mut out.data);
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn frobenius(&self) -> f64 {
        math::norm(&self.data)
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// `C ← alpha·op(A)·op(B) + beta·C` with `op(A)` of shape `m×k`, `op(B)` of
/// shape `k×n`, all storage row-major. A transposed operand is stored in its
/// untransposed shape (`k×m` for A, `n×k` for B).
#[allow(clippy::too_many_arguments)]
pub fn gemm(trans_a: bool, trans_b: bool, m: usize, n: usize, k: usize, alpha: f64, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand sizes");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices; `c` is exclusively borrowed.
    #[allow(unsafe_code)]
    unsafe {
        matrixmultiply::dgemm(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues and a matrix whose columns are the matching
/// orthonormal eigenvectors. Only the lower triangle needs to be meaningful;
/// the input is symmetrized first.
pub fn sym_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "sym_eigen needs a square matrix");
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = 0.5 * (a[(i, j)] + a[(j, i)]);
        }
    }
    let mut v = Matrix::identity(n);
    let scale = m.frobenius();
    if scale == 0.0 {
        return (vec![0.0; n], v);
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..i {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if math::sqrt(off) <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + math::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[(i, i)]).collect(), v)
}

/// Result of a pseudo-inverse solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PinvSolve {
    pub x: Vec<f64>,
    /// Number of eigen-directions kept above the cutoff.
    pub rank: usize,
}

/// `A† b` for symmetric `A`, discarding eigen-directions whose eigenvalue
/// magnitude is at most `rel_cutoff · max|λ|`.
pub fn pinv_sym_solve(a: &Matrix, b: &[f64], rel_cutoff: f64) -> PinvSolve {
    let n = a.rows();
    assert_eq!(b.len(), n, "pinv rhs length");
    let (vals, vecs) = sym_eigen(a);
    let top = vals.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let mut x = vec![0.0; n];
    let mut rank = 0;
    if top == 0.0 {
        return PinvSolve { x, rank };
    }
    let cutoff = rel_cutoff * top;
    for (i, &lam) in vals.iter().enumerate() {
        if lam.abs() <= cutoff {
            continue;
        }
        rank += 1;
        let proj: f64 = (0..n).map(|r| vecs[(r, i)] * b[r]).sum::<f64>() / lam;
        for (r, xr) in x.iter_mut().enumerate() {
            *xr += vecs[(r, i)] * proj;
        }
    }
    PinvSolve { x, rank }
}

/// Lower-triangular Cholesky factor, or `None` if `a` is not numerically
/// positive definite.
pub fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[(i, i)] = math::sqrt(sum);
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Largest singular value by power iteration on `WᵀW`.
///
/// Stops once the estimate changes by less than `rel_tol` relative to itself
/// between iterations.
pub fn spectral_norm(w: &Matrix, rel_tol: f64, max_iter: usize) -> Result<f64, LinalgError> {
    let n = w.cols();
    if n == 0 || w.rows() == 0 {
        return Ok(0.0);
    }
    // Deterministic, generic start vector.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * math::sin(1.0 + 2.3 * i as f64)).collect();
    let nv = math::norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut prev = 0.0;
    for it in 0..max_iter {
        let wv = w.matvec(&v);
        let sigma = math::norm(&wv);
        if sigma == 0.0 {
            // v fell into the null space; only possible for W = 0 given the start vector.
            return Ok(if w.frobenius() == 0.0 { 0.0 } else { w.frobenius() });
        }
        let mut next = w.tr_matvec(&wv);
        let nn = math::norm(&next);
        next.iter_mut().for_each(|x| *x /= nn);
        v = next;
        if it > 0 && (sigma - prev).abs() <= rel_tol * sigma {
            return Ok(sigma.max(prev));
        }
        prev = sigma;
    }
    Err(LinalgError::NoConvergence { iterations: max_iter })
}
