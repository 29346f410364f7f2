//! Dense linear algebra kernels.
//!
//! Column-major `f64` matrices with exactly the factorizations the solvers
//! need: Householder QR (orthonormal factor only, deterministic sign
//! convention), cyclic Jacobi symmetric eigendecomposition, tall-skinny SVD
//! via QR plus a small eigenproblem, and the sine of the largest principal
//! angle between two column spans.
//!
//! Everything here is a pure function over immutable inputs with a fixed
//! summation order, so repeated calls are bitwise reproducible.

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Frobenius tolerance for "orthonormal" checks.
pub const ORTHO_TOL: f64 = 1e-10;
/// Relative pivot threshold below which QR reports rank deficiency.
pub const RANK_TOL: f64 = 1e-12;
/// Absolute symmetry tolerance (scaled by max |entry|, floored at 1).
pub const SYM_TOL: f64 = 1e-10;
/// Off-diagonal reduction target for the Jacobi sweep, relative to ||A||_F.
pub const JACOBI_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 64;

/// Dense column-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Wraps a column-major buffer, validating length and finiteness.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values ({rows}x{cols})", rows * cols),
                got: format!("{}", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::ContractViolation(format!(
                "non-finite matrix entry {bad}"
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Row-major convenience constructor, mostly for tests and parsers.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        Self::from_fn(r, c, |i, j| rows[i][j])
    }

    /// n-by-k matrix of standard normal draws, filled column by column.
    pub fn gaussian(rows: usize, cols: usize, rng: &mut StreamRng) -> Self {
        let mut m = Self::zeros(rows, cols);
        let mut pending: Option<f64> = None;
        for j in 0..cols {
            for i in 0..rows {
                let z = match pending.take() {
                    Some(z) => z,
                    None => {
                        let (a, b) = rng.next_gaussian_pair();
                        pending = Some(b);
                        a
                    }
                };
                m.set(i, j, z);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i + j * self.rows]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i + j * self.rows] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `self * other`, accumulated column by column in index order.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let out_col = out.col_mut(j);
            for p in 0..self.cols {
                let w = other.get(p, j);
                if w == 0.0 {
                    continue;
                }
                let a_col = self.col(p);
                for i in 0..self.rows {
                    out_col[i] += a_col[i] * w;
                }
            }
        }
        out
    }

    /// `self^T * other` without forming the transpose.
    pub fn t_matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(
            self.rows, other.rows,
            "t_matmul shape mismatch: ({}x{})^T * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        for j in 0..other.cols {
            let b_col = other.col(j);
            for i in 0..self.cols {
                let a_col = self.col(i);
                let mut acc = 0.0;
                for r in 0..self.rows {
                    acc += a_col[r] * b_col[r];
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &DenseMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `|| self^T self - I ||_F`; zero for orthonormal columns.
    pub fn ortho_defect(&self) -> f64 {
        let gram = self.t_matmul(self);
        let mut acc = 0.0;
        for j in 0..gram.cols {
            for i in 0..gram.rows {
                let target = if i == j { 1.0 } else { 0.0 };
                let d = gram.get(i, j) - target;
                acc += d * d;
            }
        }
        acc.sqrt()
    }
}

/// Dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    pub fn zeros(len: usize) -> Self {
        DenseVector {
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        DenseVector { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: f64) {
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        assert_eq!(self.len(), other.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Orthonormal factor Q of the Householder QR decomposition of `m` (n >= k),
/// with the sign convention R_ii >= 0 so the factor is unique and runs are
/// reproducible across platforms.
///
/// Fails with [`Error::DegenerateRank`] when some |R_ii| falls below
/// `RANK_TOL * ||m||_F`.
pub fn qr_orthonormal_factor(m: &DenseMatrix) -> Result<DenseMatrix> {
    let (n, k) = (m.rows(), m.cols());
    assert!(n >= k, "QR requires n >= k, got {n}x{k}");
    let scale = m.frobenius_norm();
    let threshold = RANK_TOL * scale.max(f64::MIN_POSITIVE);

    let mut a = m.clone();
    // Householder vectors live below the diagonal of `a`; diag(R) in r_diag.
    let mut r_diag = vec![0.0f64; k];
    let mut tau = vec![0.0f64; k];

    for j in 0..k {
        let col = a.col_mut(j);
        let norm_sq: f64 = col[j..].iter().map(|v| v * v).sum();
        let norm = norm_sq.sqrt();
        if norm <= threshold {
            return Err(Error::DegenerateRank {
                index: j,
                pivot: norm,
                threshold,
            });
        }
        let alpha = if col[j] >= 0.0 { -norm } else { norm };
        let v0 = col[j] - alpha;
        r_diag[j] = alpha;
        col[j] = v0;
        // tau = 2 / (v^T v) with v = (v0, col[j+1..])
        let v_sq: f64 = col[j..].iter().map(|v| v * v).sum();
        tau[j] = if v_sq > 0.0 { 2.0 / v_sq } else { 0.0 };

        // Apply the reflector to the trailing columns.
        for c in (j + 1)..k {
            let (head, tail) = a.data.split_at_mut(c * n);
            let v = &head[j * n + j..j * n + n];
            let target = &mut tail[j..n];
            let mut dot = 0.0;
            for (vi, ti) in v.iter().zip(target.iter()) {
                dot += vi * ti;
            }
            dot *= tau[j];
            for (vi, ti) in v.iter().zip(target.iter_mut()) {
                *ti -= dot * vi;
            }
        }
    }

    // Form the thin Q by applying the reflectors, last to first, to I_{n x k}.
    let mut q = DenseMatrix::zeros(n, k);
    for j in 0..k {
        q.set(j, j, 1.0);
    }
    for j in (0..k).rev() {
        let v: Vec<f64> = a.col(j)[j..].to_vec();
        for c in 0..k {
            let target = &mut q.col_mut(c)[j..];
            let mut dot = 0.0;
            for (vi, ti) in v.iter().zip(target.iter()) {
                dot += vi * ti;
            }
            dot *= tau[j];
            for (vi, ti) in v.iter().zip(target.iter_mut()) {
                *ti -= dot * vi;
            }
        }
    }

    // R_ii >= 0 convention: flip Q columns where the pivot came out negative.
    for (j, &pivot) in r_diag.iter().enumerate() {
        if pivot < 0.0 {
            for v in q.col_mut(j) {
                *v = -*v;
            }
        }
    }
    Ok(q)
}

/// Top-k eigenpairs of a symmetric matrix by cyclic Jacobi sweeps.
///
/// Eigenvalues come back in descending order with orthonormal eigenvectors
/// as the columns of the second return. Intended for small dense problems
/// (k-by-k factors and desk-scale baselines).
pub fn sym_eig_topk(m: &DenseMatrix, k: usize) -> Result<(DenseVector, DenseMatrix)> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::ShapeMismatch {
            expected: "square matrix".into(),
            got: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    if k > n {
        return Err(Error::ContractViolation(format!(
            "requested {k} eigenpairs from a {n}x{n} matrix"
        )));
    }
    let sym_dev = symmetry_deviation(m);
    let tol = SYM_TOL * m.max_abs().max(1.0);
    if sym_dev > tol {
        return Err(Error::Asymmetric { deviation: sym_dev });
    }

    let (values, vectors) = jacobi_eig(m);

    // Sort descending by eigenvalue.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

    let mut top_vals = DenseVector::zeros(k);
    let mut top_vecs = DenseMatrix::zeros(n, k);
    for (out, &idx) in order.iter().take(k).enumerate() {
        top_vals.set(out, values[idx]);
        top_vecs.col_mut(out).copy_from_slice(vectors.col(idx));
    }
    Ok((top_vals, top_vecs))
}

pub fn symmetry_deviation(m: &DenseMatrix) -> f64 {
    let n = m.rows().min(m.cols());
    let mut dev: f64 = 0.0;
    for j in 0..n {
        for i in (j + 1)..n {
            dev = dev.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    dev
}

/// Full Jacobi eigendecomposition; assumes symmetry was already checked.
fn jacobi_eig(m: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    let n = m.rows();
    let mut a = m.clone();
    let mut v = DenseMatrix::identity(n);
    if n <= 1 {
        return ((0..n).map(|i| a.get(i, i)).collect(), v);
    }
    let stop = JACOBI_TOL * m.frobenius_norm().max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off: f64 = 0.0;
        for q in 0..n {
            for p in 0..q {
                off += a.get(p, q) * a.get(p, q);
            }
        }
        if (2.0 * off).sqrt() <= stop {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() <= stop / (n as f64) {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for i in 0..n {
                    if i != p && i != q {
                        let aip = a.get(i, p);
                        let aiq = a.get(i, q);
                        a.set(i, p, c * aip - s * aiq);
                        a.set(p, i, a.get(i, p));
                        a.set(i, q, s * aip + c * aiq);
                        a.set(q, i, a.get(i, q));
                    }
                }
                a.set(p, p, c * c * app - 2.0 * s * c * apq + s * s * aqq);
                a.set(q, q, s * s * app + 2.0 * s * c * apq + c * c * aqq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);

                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    ((0..n).map(|i| a.get(i, i)).collect(), v)
}

/// Thin SVD of a tall matrix (n >= k): `m = U diag(s) V^T`.
///
/// Route: QR of `m`, then the k-by-k symmetric eigenproblem of `R^T R`.
/// Singular values descend; U has orthonormal columns.
pub fn svd_tall(m: &DenseMatrix) -> Result<(DenseMatrix, DenseVector, DenseMatrix)> {
    let (n, k) = (m.rows(), m.cols());
    assert!(n >= k, "svd_tall requires n >= k, got {n}x{k}");
    let q = qr_orthonormal_factor(m)?;
    // R = Q^T m is k-by-k upper triangular up to roundoff.
    let r = q.t_matmul(m);
    let gram = r.t_matmul(&r);
    let (raw_vals, vecs) = sym_eig_topk(&gram, k)?;

    let mut s = DenseVector::zeros(k);
    for i in 0..k {
        s.set(i, raw_vals.get(i).max(0.0).sqrt());
    }
    let threshold = RANK_TOL * m.frobenius_norm().max(f64::MIN_POSITIVE);
    if s.get(k - 1) <= threshold {
        return Err(Error::DegenerateRank {
            index: k - 1,
            pivot: s.get(k - 1),
            threshold,
        });
    }

    // U = m V diag(1/s)
    let mv = m.matmul(&vecs);
    let mut u = DenseMatrix::zeros(n, k);
    for j in 0..k {
        let inv = 1.0 / s.get(j);
        for i in 0..n {
            u.set(i, j, mv.get(i, j) * inv);
        }
    }
    Ok((u, s, vecs.transpose()))
}

/// Sine of the largest principal angle between span(a) and span(b):
/// the spectral norm of `(I - a a^T) b`, in [0, 1]. Zero iff the spans
/// coincide; invariant under right-rotation of either argument.
pub fn subspace_distance(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", a.rows(), a.cols()),
            got: format!("{}x{}", b.rows(), b.cols()),
        });
    }
    for (name, m) in [("first", a), ("second", b)] {
        let defect = m.ortho_defect();
        if defect > 1e-6 {
            return Err(Error::ContractViolation(format!(
                "{name} argument of subspace_distance is not orthonormal (defect {defect:.3e})"
            )));
        }
    }
    // residual = b - a (a^T b); sigma_max(residual) via the k-by-k Gram matrix.
    let atb = a.t_matmul(b);
    let mut residual = b.clone();
    let proj = a.matmul(&atb);
    residual.axpy(-1.0, &proj);
    let gram = residual.t_matmul(&residual);
    let (vals, _) = sym_eig_topk(&gram, 1)?;
    Ok(vals.get(0).max(0.0).sqrt().min(1.0))
}
