//! Dense symmetric-matrix primitives: a cyclic Jacobi eigensolver,
//! simultaneous diagonalization of commuting families, Laplacian-class
//! membership checks, principal minors, and the block-mean projection used
//! for network disagreement vectors.
//!
//! Everything here is sized for coupling analysis (a few hundred rows at
//! most), so the storage is plain dense `Vec<f64>` and the algorithms favor
//! robustness over asymptotic cleverness.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard cap on Jacobi sweeps before reporting failure.
const MAX_JACOBI_SWEEPS: usize = 100;

/// Per-pair rotation threshold, relative to the local diagonal: the pair
/// (p, q) is considered annihilated once |a_pq| <= REL * sqrt(|a_pp * a_qq|).
/// Relative to the pair's own scale rather than to max|A|, so the tiny
/// eigenvalues of graded positive definite matrices keep their sign and
/// leading digits instead of drowning in the largest entries.
const JACOBI_REL_TOL: f64 = 1e-14;

/// Absolute convergence requirement on the final off-diagonal, scaled by
/// max|A|. The relative rule above is stricter in practice; this is the
/// contract the solver reports against.
const JACOBI_ABS_TOL: f64 = 1e-12;

/// Residual allowed when reconstructing A from V * diag(w) * V^T, relative
/// to max|A|.
const RECONSTRUCT_TOL: f64 = 1e-9;

/// Asymmetry allowed when building a symmetric matrix from raw rows,
/// relative to the largest entry.
const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("dimension mismatch: {0}")]
    InvalidDimensions(String),
    #[error("not simultaneously diagonalizable: residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    NotSimultaneous { residual: f64, tol: f64 },
    #[error("eigensolver did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("singular matrix in linear solve")]
    Singular,
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, MatrixError>;

/// Dense symmetric matrix. Symmetry is validated when built from raw rows
/// and preserved by every operation that returns `SymMatrix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = MatrixError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

impl SymMatrix {
    /// Build from square rows. Entries must be finite and symmetric to
    /// within 1e-9 of the largest entry; the stored matrix is the exact
    /// symmetric average of the input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(MatrixError::InvalidDimensions("empty matrix".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(MatrixError::InvalidDimensions(format!(
                    "row {i} has {} entries, expected {dim}",
                    r.len()
                )));
            }
        }
        let mut scale: f64 = 0.0;
        for r in rows {
            for &x in r {
                if !x.is_finite() {
                    return Err(MatrixError::InvalidMatrix("non-finite entry".into()));
                }
                scale = scale.max(x.abs());
            }
        }
        let tol = SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE);
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let asym = (rows[i][j] - rows[j][i]).abs();
                if asym > tol {
                    return Err(MatrixError::InvalidMatrix(format!(
                        "asymmetric at ({i},{j}): |{} - {}| = {asym:.3e}",
                        rows[i][j], rows[j][i]
                    )));
                }
                data[i * dim + j] = 0.5 * (rows[i][j] + rows[j][i]);
            }
        }
        Ok(SymMatrix { dim, data })
    }

    /// Build from a function of (row, col); only the upper triangle is
    /// sampled, so the result is symmetric by construction.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                data[i * dim + j] = v;
                data[j * dim + i] = v;
            }
        }
        SymMatrix { dim, data }
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        Self::from_fn(dim, |i, j| if i == j { s } else { 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| self.data[i * self.dim..(i + 1) * self.dim].to_vec())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "matvec length mismatch");
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            y[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        y
    }

    /// y^T A y.
    pub fn quadratic_form(&self, y: &[f64]) -> f64 {
        self.matvec(y).iter().zip(y).map(|(a, b)| a * b).sum()
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, other.dim, "add dimension mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        SymMatrix {
            dim: self.dim,
            data,
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, other.dim, "sub dimension mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        SymMatrix {
            dim: self.dim,
            data,
        }
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// General (possibly asymmetric) product as a dense matrix.
    pub fn mul_dense(&self, other: &SymMatrix) -> DenseMatrix {
        assert_eq!(self.dim, other.dim, "mul dimension mismatch");
        let n = self.dim;
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix {
            rows: self.dim,
            cols: self.dim,
            data: self.data.clone(),
        }
    }
}

/// Product of two commuting symmetric matrices, symmetrized as
/// (AB + (AB)^T)/2 after asserting the floating-point asymmetry stays below
/// 1e-9 relative to the product's largest entry. Non-commuting inputs are
/// rejected rather than silently averaged.
pub fn symmetrized_product(a: &SymMatrix, b: &SymMatrix) -> Result<SymMatrix> {
    let p = a.mul_dense(b);
    let n = p.rows;
    let scale = p.max_abs().max(f64::MIN_POSITIVE);
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((p.get(i, j) - p.get(j, i)).abs());
        }
    }
    if asym > 1e-9 * scale {
        return Err(MatrixError::NotSimultaneous {
            residual: asym / scale,
            tol: 1e-9,
        });
    }
    Ok(SymMatrix::from_fn(n, |i, j| {
        0.5 * (p.get(i, j) + p.get(j, i))
    }))
}

/// Dense rectangular matrix, row-major. Used for eigenvector bases,
/// controllability matrices, and state transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for DenseMatrix {
    type Error = MatrixError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        DenseMatrix::from_rows(&rows)
    }
}

impl From<DenseMatrix> for Vec<Vec<f64>> {
    fn from(m: DenseMatrix) -> Self {
        m.to_rows()
    }
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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(MatrixError::InvalidDimensions("empty matrix".into()));
        }
        let cols = rows[0].len();
        if cols == 0 {
            return Err(MatrixError::InvalidDimensions("empty row".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(MatrixError::InvalidDimensions(format!(
                    "ragged row {i}: {} entries, expected {cols}",
                    r.len()
                )));
            }
            for &x in r {
                if !x.is_finite() {
                    return Err(MatrixError::InvalidMatrix("non-finite entry".into()));
                }
                data.push(x);
            }
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].to_vec())
            .collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[f64]) {
        assert_eq!(v.len(), self.rows);
        for i in 0..self.rows {
            self.set(i, j, v[i]);
        }
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec length mismatch");
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            y[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        y
    }

    pub fn mul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "mul dimension mismatch");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Determinant by LU with partial pivoting. Square matrices only.
    pub fn det(&self) -> Result<f64> {
        if self.rows != self.cols {
            return Err(MatrixError::InvalidDimensions(
                "determinant of non-square matrix".into(),
            ));
        }
        let n = self.rows;
        let mut a = self.data.clone();
        let mut det = 1.0;
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].abs();
            for r in (col + 1)..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 {
                return Ok(0.0);
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                det = -det;
            }
            let d = a[col * n + col];
            det *= d;
            for r in (col + 1)..n {
                let f = a[r * n + col] / d;
                if f == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
            }
        }
        Ok(det)
    }

    /// Solve A x = b by LU with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if self.rows != self.cols {
            return Err(MatrixError::InvalidDimensions(
                "solve with non-square matrix".into(),
            ));
        }
        if b.len() != self.rows {
            return Err(MatrixError::InvalidDimensions(
                "right-hand side length mismatch".into(),
            ));
        }
        let n = self.rows;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].abs();
            for r in (col + 1)..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best <= 1e-14 * scale {
                return Err(MatrixError::Singular);
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                x.swap(col, piv);
            }
            let d = a[col * n + col];
            for r in (col + 1)..n {
                let f = a[r * n + col] / d;
                if f == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
                x[r] -= f * x[col];
            }
        }
        for col in (0..n).rev() {
            let mut s = x[col];
            for j in (col + 1)..n {
                s -= a[col * n + j] * x[j];
            }
            x[col] = s / a[col * n + col];
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<DenseMatrix> {
        if self.rows != self.cols {
            return Err(MatrixError::InvalidDimensions(
                "inverse of non-square matrix".into(),
            ));
        }
        let n = self.rows;
        let mut inv = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = self.solve(&e)?;
            inv.set_column(j, &col);
        }
        Ok(inv)
    }
}

/// Eigendecomposition of a symmetric matrix: `values` ascending, `vectors`
/// holding the matching orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

impl EigenDecomposition {
    pub fn vector(&self, j: usize) -> Vec<f64> {
        self.vectors.column(j)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps rotate every off-diagonal pair whose magnitude still exceeds
/// 1e-14 * sqrt(|a_pp * a_qq|); convergence therefore also meets the
/// absolute bound of 1e-12 * max|A| on the remaining off-diagonal mass.
/// The reconstruction V * diag(w) * V^T is checked against the input to
/// 1e-9 * max|A| before returning.
pub fn eigh(m: &SymMatrix) -> Result<EigenDecomposition> {
    let n = m.dim;
    for &x in &m.data {
        if !x.is_finite() {
            return Err(MatrixError::InvalidMatrix("non-finite entry".into()));
        }
    }
    let scale = m.max_abs();
    let mut a = m.data.clone();
    let mut v = DenseMatrix::identity(n);
    if scale > 0.0 {
        let mut converged = false;
        for _sweep in 0..MAX_JACOBI_SWEEPS {
            let mut rotated = false;
            for p in 0..n.saturating_sub(1) {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    if apq.abs() <= JACOBI_REL_TOL * (app.abs() * aqq.abs()).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = if theta.abs() > 1e150 {
                        0.5 / theta
                    } else {
                        let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                        sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                    };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    let tau = s / (1.0 + c);
                    a[p * n + p] = app - t * apq;
                    a[q * n + q] = aqq + t * apq;
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    for r in 0..n {
                        if r == p || r == q {
                            continue;
                        }
                        let arp = a[r * n + p];
                        let arq = a[r * n + q];
                        let new_rp = arp - s * (arq + tau * arp);
                        let new_rq = arq + s * (arp - tau * arq);
                        a[r * n + p] = new_rp;
                        a[p * n + r] = new_rp;
                        a[r * n + q] = new_rq;
                        a[q * n + r] = new_rq;
                    }
                    for r in 0..n {
                        let vrp = v.get(r, p);
                        let vrq = v.get(r, q);
                        v.set(r, p, vrp - s * (vrq + tau * vrp));
                        v.set(r, q, vrq + s * (vrp - tau * vrq));
                    }
                }
            }
            if !rotated {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(MatrixError::NoConvergence(MAX_JACOBI_SWEEPS));
        }
        let mut max_off: f64 = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                max_off = max_off.max(a[p * n + q].abs());
            }
        }
        if max_off > JACOBI_ABS_TOL * scale {
            return Err(MatrixError::NoConvergence(MAX_JACOBI_SWEEPS));
        }
    }

    // Sort ascending, carrying eigenvectors along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[i * n + i]
            .partial_cmp(&a[j * n + j])
            .expect("finite eigenvalues")
    });
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        let mut col = v.column(old_j);
        orient_column(&mut col);
        vectors.set_column(new_j, &col);
    }

    // Reconstruction guard.
    if scale > 0.0 {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += vectors.get(i, k) * values[k] * vectors.get(j, k);
                }
                worst = worst.max((s - m.get(i, j)).abs());
            }
        }
        if worst > RECONSTRUCT_TOL * scale {
            return Err(MatrixError::NoConvergence(MAX_JACOBI_SWEEPS));
        }
    }

    Ok(EigenDecomposition { values, vectors })
}

/// Deterministic sign convention: flip the column so its largest-magnitude
/// entry (lowest index on ties) is positive.
fn orient_column(col: &mut [f64]) {
    let mut k = 0;
    let mut best = 0.0;
    for (i, &x) in col.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            k = i;
        }
    }
    if col[k] < 0.0 {
        for x in col.iter_mut() {
            *x = -*x;
        }
    }
}

/// Membership report for the class of generalized Laplacians: symmetric,
/// annihilates the all-ones vector, exactly one zero eigenvalue, all other
/// eigenvalues positive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaplacianClassReport {
    pub dim: usize,
    /// max |(L * 1)_i|.
    pub kernel_residual: f64,
    /// Second-smallest eigenvalue.
    pub lambda2: f64,
    /// How far the most negative eigenvalue dips below zero (0 if none do).
    pub negative_eig_excess: f64,
    pub is_member: bool,
}

/// Check membership in the generalized Laplacian class against an absolute
/// tolerance: kernel residual and negative-eigenvalue excess must stay within
/// `tol`, and the second-smallest eigenvalue must exceed it.
pub fn classify_laplacian(m: &SymMatrix, tol: f64) -> Result<LaplacianClassReport> {
    if m.dim < 2 {
        return Err(MatrixError::InvalidDimensions(
            "Laplacian-class matrices need dimension >= 2".into(),
        ));
    }
    let ones = vec![1.0; m.dim];
    let kernel_residual = m
        .matvec(&ones)
        .iter()
        .fold(0.0f64, |acc, x| acc.max(x.abs()));
    let eig = eigh(m)?;
    let lambda2 = eig.values[1];
    let negative_eig_excess = (-eig.values[0]).max(0.0);
    let is_member = kernel_residual <= tol && lambda2 > tol && negative_eig_excess <= tol;
    Ok(LaplacianClassReport {
        dim: m.dim,
        kernel_residual,
        lambda2,
        negative_eig_excess,
        is_member,
    })
}

/// Tolerance used by this crate when classifying a matrix of the given
/// scale: relative to the largest entry so that uniformly rescaled couplings
/// classify identically.
pub fn laplacian_tol_for(m: &SymMatrix) -> f64 {
    1e-9 * m.max_abs().max(f64::MIN_POSITIVE)
}

/// Gap threshold under which two eigenvalues of the same matrix are treated
/// as one cluster during simultaneous diagonalization.
fn cluster_gap(scale: f64) -> f64 {
    1e-8 * scale.max(f64::MIN_POSITIVE)
}

/// Shared eigenbasis of a family of pairwise-commuting symmetric matrices.
///
/// Returns the orthonormal basis U (columns) and one eigenvalue list per
/// input matrix, aligned with the columns. Columns are ordered by ascending
/// eigenvalue of the first matrix, ties broken by the following matrices in
/// order. When every input is Laplacian-class the consensus direction is
/// pinned to column 0 as exactly 1/sqrt(N) per entry.
///
/// Fails with `NotSimultaneous` if any input is not diagonalized by the
/// common basis to within `tol` (largest off-diagonal of U^T L U).
pub fn simultaneous_eigenbasis(
    mats: &[SymMatrix],
    tol: f64,
) -> Result<(DenseMatrix, Vec<Vec<f64>>)> {
    if mats.is_empty() {
        return Err(MatrixError::InvalidDimensions("no matrices given".into()));
    }
    let n = mats[0].dim;
    for m in mats {
        if m.dim != n {
            return Err(MatrixError::InvalidDimensions(
                "matrices differ in dimension".into(),
            ));
        }
    }

    let first = eigh(&mats[0])?;
    let mut u = first.vectors;
    let mut groups = split_into_clusters((0..n).collect(), &first.values, cluster_gap(mats[0].max_abs()));

    for m in &mats[1..] {
        let gap = cluster_gap(m.max_abs());
        let mut new_groups = Vec::new();
        for g in groups {
            if g.len() == 1 {
                new_groups.push(g);
                continue;
            }
            // Diagonalize the restriction of m to the current cluster's span.
            let cols: Vec<Vec<f64>> = g.iter().map(|&j| u.column(j)).collect();
            let images: Vec<Vec<f64>> = cols.iter().map(|c| m.matvec(c)).collect();
            let r = SymMatrix::from_fn(g.len(), |i, j| {
                let rij: f64 = cols[i].iter().zip(&images[j]).map(|(a, b)| a * b).sum();
                let rji: f64 = cols[j].iter().zip(&images[i]).map(|(a, b)| a * b).sum();
                0.5 * (rij + rji)
            });
            let sub = eigh(&r)?;
            // Rotate the cluster's columns into the refined basis.
            for (local, &global) in g.iter().enumerate() {
                let mut col = vec![0.0; n];
                for (k, c) in cols.iter().enumerate() {
                    let w = sub.vectors.get(k, local);
                    if w == 0.0 {
                        continue;
                    }
                    for (ci, &cv) in c.iter().enumerate() {
                        col[ci] += w * cv;
                    }
                }
                u.set_column(global, &col);
            }
            new_groups.extend(split_into_clusters(g, &sub.values, gap));
        }
        groups = new_groups;
    }

    // Pin the consensus direction when all inputs are Laplacian-class.
    let nu = vec![1.0 / (n as f64).sqrt(); n];
    let all_laplacian = mats.iter().all(|m| {
        classify_laplacian(m, laplacian_tol_for(m))
            .map(|r| r.is_member)
            .unwrap_or(false)
    });
    if all_laplacian {
        let col0 = u.column(0);
        let overlap: f64 = col0.iter().zip(&nu).map(|(a, b)| a * b).sum();
        if overlap.abs() >= 1.0 - 1e-6 {
            u.set_column(0, &nu);
            for j in 1..n {
                let mut col = u.column(j);
                let proj: f64 = col.iter().zip(&nu).map(|(a, b)| a * b).sum();
                for (ci, x) in col.iter_mut().enumerate() {
                    *x -= proj * nu[ci];
                }
                let norm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in col.iter_mut() {
                    *x /= norm;
                }
                u.set_column(j, &col);
            }
        }
    }

    for j in if all_laplacian { 1 } else { 0 }..n {
        let mut col = u.column(j);
        orient_column(&mut col);
        u.set_column(j, &col);
    }

    // Verify the basis diagonalizes every input, and read the eigenvalues
    // off the diagonals.
    let mut eigenvalues = Vec::with_capacity(mats.len());
    for m in mats {
        let mut vals = vec![0.0; n];
        let mut residual: f64 = 0.0;
        let images: Vec<Vec<f64>> = (0..n).map(|j| m.matvec(&u.column(j))).collect();
        for i in 0..n {
            let col_i = u.column(i);
            for j in 0..n {
                let x: f64 = col_i.iter().zip(&images[j]).map(|(a, b)| a * b).sum();
                if i == j {
                    vals[i] = x;
                } else {
                    residual = residual.max(x.abs());
                }
            }
        }
        if residual > tol {
            return Err(MatrixError::NotSimultaneous { residual, tol });
        }
        eigenvalues.push(vals);
    }

    Ok((u, eigenvalues))
}

fn split_into_clusters(indices: Vec<usize>, values: &[f64], gap: f64) -> Vec<Vec<usize>> {
    // `values` is ascending and parallel to `indices` (position k of values
    // describes indices[k]).
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (k, &idx) in indices.iter().enumerate() {
        let fresh = match groups.last() {
            None => true,
            Some(_) => values[k] - values[k - 1] > gap,
        };
        if fresh {
            groups.push(vec![idx]);
        } else {
            groups.last_mut().unwrap().push(idx);
        }
    }
    groups
}

/// Leading and trailing principal minors, k = 1..=n: determinants of the
/// top-left and bottom-right k-by-k corners.
pub fn principal_minors(m: &SymMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.dim;
    let mut leading = Vec::with_capacity(n);
    let mut trailing = Vec::with_capacity(n);
    for k in 1..=n {
        let lead = DenseMatrix::from_rows(
            &(0..k)
                .map(|i| (0..k).map(|j| m.get(i, j)).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        )
        .expect("square corner");
        let trail = DenseMatrix::from_rows(
            &(n - k..n)
                .map(|i| (n - k..n).map(|j| m.get(i, j)).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        )
        .expect("square corner");
        leading.push(lead.det().expect("square"));
        trailing.push(trail.det().expect("square"));
    }
    (leading, trailing)
}

/// Remove the per-block mean from a stacked vector of `order` blocks of
/// `agents` entries each: the projection onto the disagreement subspace
/// (orthogonal complement of the per-block consensus directions).
pub fn project_disagreement(y: &[f64], order: usize, agents: usize) -> Result<Vec<f64>> {
    if order == 0 || agents == 0 || y.len() != order * agents {
        return Err(MatrixError::InvalidDimensions(format!(
            "expected {order} blocks of {agents} entries, got length {}",
            y.len()
        )));
    }
    let mut out = y.to_vec();
    for b in 0..order {
        let block = &mut out[b * agents..(b + 1) * agents];
        let mean = block.iter().sum::<f64>() / agents as f64;
        for x in block.iter_mut() {
            *x -= mean;
        }
    }
    Ok(out)
}

/// Parse the plain-text matrix format: a `dim N` header line, then N rows of
/// N whitespace-separated numbers. Blank lines and `#` comments are skipped.
pub fn parse_matrix_text(text: &str) -> Result<SymMatrix> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| MatrixError::Parse("empty input".into()))?;
    let mut parts = header.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some("dim"), Some(d), None) => {
            let dim: usize = d
                .parse()
                .map_err(|_| MatrixError::Parse(format!("bad dimension {d:?}")))?;
            let mut rows = Vec::with_capacity(dim);
            for i in 0..dim {
                let line = lines
                    .next()
                    .ok_or_else(|| MatrixError::Parse(format!("missing row {i}")))?;
                let row: std::result::Result<Vec<f64>, _> =
                    line.split_whitespace().map(str::parse::<f64>).collect();
                let row = row.map_err(|e| MatrixError::Parse(format!("row {i}: {e}")))?;
                if row.len() != dim {
                    return Err(MatrixError::Parse(format!(
                        "row {i} has {} entries, expected {dim}",
                        row.len()
                    )));
                }
                rows.push(row);
            }
            if lines.next().is_some() {
                return Err(MatrixError::Parse("trailing content after matrix".into()));
            }
            SymMatrix::from_rows(&rows)
        }
        _ => Err(MatrixError::Parse(format!(
            "expected header 'dim N', got {header:?}"
        ))),
    }
}

/// Render a matrix in the text format accepted by [`parse_matrix_text`].
pub fn format_matrix_text(m: &SymMatrix) -> String {
    let mut out = format!("dim {}\n", m.dim());
    for i in 0..m.dim() {
        let row: Vec<String> = (0..m.dim()).map(|j| format!("{}", m.get(i, j))).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
