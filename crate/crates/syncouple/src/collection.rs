//! Synthesis and verification of coupling-matrix collections.
//!
//! A collection is an ordered family L_1..L_n of Laplacian-class matrices
//! sharing one orthonormal eigenbasis, whose per-mode eigenvalues satisfy an
//! interlocked chain of inequalities (one chain per nonzero mode). Those
//! inequalities are exactly what the energy argument in [`crate::lyapunov`]
//! needs, so a collection that verifies here yields coupling gains that
//! synchronize any network of weak-Lipschitz companion-form agents once the
//! scalar gain is large enough.
//!
//! Two synthesizers are provided: [`synthesize_free`] assigns spectra freely
//! inside the feasible region (any eigenbasis), and [`synthesize_graph`]
//! constrains every matrix to be a scalar multiple of one graph Laplacian so
//! the result is implementable on a fixed topology.
//!
//! Eigenvalue bookkeeping uses two conventions throughout: index 0 carries
//! the value 0 and index n+1 carries 1/2 (they stand for the zero matrix and
//! half the identity in the block constructions).

use crate::matrixcore::{
    classify_laplacian, eigh, laplacian_tol_for, simultaneous_eigenbasis, DenseMatrix,
    MatrixError, SymMatrix,
};
use crate::report::CheckReport;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version tag for serialized collection documents.
pub const COLLECTION_SCHEMA_VERSION: &str = "1";

/// Residual allowed when checking that a matrix is reproduced by the shared
/// eigenbasis and the eigenvalue table.
const BASIS_RECONSTRUCT_TOL: f64 = 1e-9;

/// Orthonormality / consensus-column tolerance for user-supplied bases.
const BASIS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CollectionError {
    #[error("invalid order: {0}")]
    InvalidOrder(String),
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("margin must lie strictly inside (0,1), got {0}")]
    InvalidMargin(f64),
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("graph matrix is not Laplacian-class: {0}")]
    NotLaplacianClass(String),
    #[error("graph is not connected: algebraic connectivity {lambda2:.3e}")]
    NotConnected { lambda2: f64 },
    #[error("collection is infeasible: {0}")]
    InfeasibleCollection(String),
    #[error("invalid collection document: {0}")]
    InvalidDocument(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

pub type Result<T> = std::result::Result<T, CollectionError>;

/// An ordered family L_1..L_n of N×N Laplacian-class coupling matrices with a
/// shared orthonormal eigenbasis and the full eigenvalue table, including the
/// convention rows for indices 0 and n+1.
///
/// Eigenvalue access is `lambda(k, mode)` with k in 0..=n+1 and `mode` the
/// 0-based basis column; mode 0 is the consensus direction (eigenvalue 0 for
/// every L_k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CollectionDoc", into = "CollectionDoc")]
pub struct SpectralCollection {
    agents: usize,
    order: usize,
    matrices: Vec<SymMatrix>,
    basis: DenseMatrix,
    /// Row k (0..=n+1) holds the eigenvalues of L_k per mode; row 0 is all
    /// zeros and row n+1 is all 1/2.
    lambda: Vec<Vec<f64>>,
    /// Safety margin used at synthesis time; `None` for externally assembled
    /// collections.
    margin: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CollectionDoc {
    schema_version: String,
    agents: usize,
    order: usize,
    matrices: Vec<SymMatrix>,
    basis: DenseMatrix,
    lambda: Vec<Vec<f64>>,
    margin: Option<f64>,
}

impl TryFrom<CollectionDoc> for SpectralCollection {
    type Error = CollectionError;
    fn try_from(doc: CollectionDoc) -> Result<Self> {
        if doc.schema_version != COLLECTION_SCHEMA_VERSION {
            return Err(CollectionError::InvalidDocument(format!(
                "unsupported schema_version {:?}",
                doc.schema_version
            )));
        }
        let c = SpectralCollection {
            agents: doc.agents,
            order: doc.order,
            matrices: doc.matrices,
            basis: doc.basis,
            lambda: doc.lambda,
            margin: doc.margin,
        };
        c.validate_structure()?;
        Ok(c)
    }
}

impl From<SpectralCollection> for CollectionDoc {
    fn from(c: SpectralCollection) -> Self {
        CollectionDoc {
            schema_version: COLLECTION_SCHEMA_VERSION.to_string(),
            agents: c.agents,
            order: c.order,
            matrices: c.matrices,
            basis: c.basis,
            lambda: c.lambda,
            margin: c.margin,
        }
    }
}

impl SpectralCollection {
    /// Assemble a collection from an eigenbasis and per-mode eigenvalues.
    ///
    /// `rows` holds one row per matrix index k = 1..=n; each row lists the
    /// eigenvalues of the NONZERO modes (basis columns 1..N), so rows have
    /// length N−1 and must be strictly positive. Matrices are reconstructed
    /// as U·diag(0, row)·Uᵀ. Structural invariants (Laplacian class,
    /// reconstruction, positivity) are enforced; the spectral-chain
    /// inequalities are NOT — that is [`verify_collection`]'s job, which
    /// makes this the entry point for building deliberately infeasible
    /// collections in tests.
    pub fn from_eigen_table(basis: DenseMatrix, rows: &[Vec<f64>]) -> Result<Self> {
        let agents = basis.rows();
        let order = rows.len();
        if order < 2 {
            return Err(CollectionError::InvalidOrder(format!(
                "order must be at least 2, got {order}"
            )));
        }
        validate_basis(&basis, agents)?;
        for (k, row) in rows.iter().enumerate() {
            if row.len() != agents - 1 {
                return Err(CollectionError::InvalidSpectrum(format!(
                    "row {} has {} eigenvalues, expected {}",
                    k + 1,
                    row.len(),
                    agents - 1
                )));
            }
        }
        let matrices: Vec<SymMatrix> = rows
            .iter()
            .map(|row| reconstruct_from_modes(&basis, row))
            .collect();
        let lambda = lambda_table(agents, order, rows);
        let c = SpectralCollection {
            agents,
            order,
            matrices,
            basis,
            lambda,
            margin: None,
        };
        c.validate_structure()?;
        Ok(c)
    }

    /// Number of agents N (matrix dimension).
    pub fn agents(&self) -> usize {
        self.agents
    }

    /// Collection order n (number of matrices).
    pub fn order(&self) -> usize {
        self.order
    }

    /// All matrices L_1..L_n in order.
    pub fn matrices(&self) -> &[SymMatrix] {
        &self.matrices
    }

    /// L_k for k = 1..=n.
    pub fn matrix(&self, k: usize) -> &SymMatrix {
        assert!(k >= 1 && k <= self.order, "matrix index {k} out of range");
        &self.matrices[k - 1]
    }

    /// Shared orthonormal eigenbasis; column 0 is the consensus direction.
    pub fn basis(&self) -> &DenseMatrix {
        &self.basis
    }

    /// Margin used by the synthesizer, if this collection came from one.
    pub fn margin(&self) -> Option<f64> {
        self.margin
    }

    /// λ_k for the given basis column, with the conventions λ_0 = 0 and
    /// λ_{n+1} = 1/2 included (k in 0..=n+1).
    pub fn lambda(&self, k: usize, mode: usize) -> f64 {
        self.lambda[k][mode]
    }

    /// Full eigenvalue row for one mode, indices 0..=n+1.
    pub fn mode_lambdas(&self, mode: usize) -> Vec<f64> {
        self.lambda.iter().map(|row| row[mode]).collect()
    }

    fn validate_structure(&self) -> Result<()> {
        let (n, nagents) = (self.order, self.agents);
        if n < 2 {
            return Err(CollectionError::InvalidOrder(format!(
                "order must be at least 2, got {n}"
            )));
        }
        if nagents < 2 {
            return Err(CollectionError::InvalidOrder(format!(
                "need at least 2 agents, got {nagents}"
            )));
        }
        if self.matrices.len() != n {
            return Err(CollectionError::InvalidDocument(format!(
                "expected {n} matrices, found {}",
                self.matrices.len()
            )));
        }
        if self.basis.rows() != nagents || self.basis.cols() != nagents {
            return Err(CollectionError::InvalidDocument(
                "basis dimensions do not match agent count".into(),
            ));
        }
        validate_basis(&self.basis, nagents)?;
        if self.lambda.len() != n + 2 || self.lambda.iter().any(|r| r.len() != nagents) {
            return Err(CollectionError::InvalidDocument(format!(
                "eigenvalue table must be {}x{nagents}",
                n + 2
            )));
        }
        for (i, &v) in self.lambda[0].iter().enumerate() {
            if v != 0.0 {
                return Err(CollectionError::InvalidDocument(format!(
                    "index-0 eigenvalue row must be zero, found {v} at mode {i}"
                )));
            }
        }
        for (i, &v) in self.lambda[n + 1].iter().enumerate() {
            if v != 0.5 {
                return Err(CollectionError::InvalidDocument(format!(
                    "index-{} eigenvalue row must be 1/2, found {v} at mode {i}",
                    n + 1
                )));
            }
        }
        for k in 1..=n {
            if self.lambda[k][0].abs() > 1e-12 {
                return Err(CollectionError::InvalidDocument(format!(
                    "consensus mode of L_{k} must have eigenvalue 0"
                )));
            }
            for mode in 1..nagents {
                let v = self.lambda[k][mode];
                if !(v > 0.0) || !v.is_finite() {
                    return Err(CollectionError::InvalidSpectrum(format!(
                        "eigenvalue of L_{k} at mode {mode} must be positive, got {v}"
                    )));
                }
            }
        }
        for (kk, m) in self.matrices.iter().enumerate() {
            let k = kk + 1;
            if m.dim() != nagents {
                return Err(CollectionError::InvalidDocument(format!(
                    "L_{k} is {}x{}, expected {nagents}x{nagents}",
                    m.dim(),
                    m.dim()
                )));
            }
            let rep = classify_laplacian(m, laplacian_tol_for(m))?;
            if !rep.is_member {
                return Err(CollectionError::NotLaplacianClass(format!(
                    "L_{k}: kernel residual {:.3e}, lambda2 {:.3e}, negative excess {:.3e}",
                    rep.kernel_residual, rep.lambda2, rep.negative_eig_excess
                )));
            }
            let residual = self.basis_residual(k);
            if residual > BASIS_RECONSTRUCT_TOL * m.max_abs().max(1.0) {
                return Err(CollectionError::InvalidDocument(format!(
                    "L_{k} is not reproduced by the eigenbasis and table (residual {residual:.3e})"
                )));
            }
        }
        Ok(())
    }

    /// ‖L_k − U·diag(λ_k)·Uᵀ‖_max.
    pub fn basis_residual(&self, k: usize) -> f64 {
        let m = self.matrix(k);
        let nagents = self.agents;
        let mut worst: f64 = 0.0;
        for a in 0..nagents {
            for b in a..nagents {
                let mut s = 0.0;
                for mode in 1..nagents {
                    s += self.lambda[k][mode] * self.basis.get(a, mode) * self.basis.get(b, mode);
                }
                worst = worst.max((s - m.get(a, b)).abs());
            }
        }
        worst
    }
}

fn lambda_table(agents: usize, order: usize, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut lambda = vec![vec![0.0; agents]; order + 2];
    for (k, row) in rows.iter().enumerate() {
        for (m, &v) in row.iter().enumerate() {
            lambda[k + 1][m + 1] = v;
        }
    }
    lambda[order + 1] = vec![0.5; agents];
    lambda
}

fn reconstruct_from_modes(basis: &DenseMatrix, row: &[f64]) -> SymMatrix {
    let nagents = basis.rows();
    SymMatrix::from_fn(nagents, |a, b| {
        let mut s = 0.0;
        for (m, &v) in row.iter().enumerate() {
            s += v * basis.get(a, m + 1) * basis.get(b, m + 1);
        }
        s
    })
}

fn validate_basis(basis: &DenseMatrix, agents: usize) -> Result<()> {
    if agents < 2 {
        return Err(CollectionError::InvalidOrder(format!(
            "need at least 2 agents, got {agents}"
        )));
    }
    if basis.rows() != agents || basis.cols() != agents {
        return Err(CollectionError::InvalidBasis(format!(
            "basis must be {agents}x{agents}, got {}x{}",
            basis.rows(),
            basis.cols()
        )));
    }
    for i in 0..agents {
        for j in i..agents {
            let dot: f64 = (0..agents)
                .map(|r| basis.get(r, i) * basis.get(r, j))
                .sum();
            let want = if i == j { 1.0 } else { 0.0 };
            if (dot - want).abs() > BASIS_TOL {
                return Err(CollectionError::InvalidBasis(format!(
                    "columns {i} and {j} have inner product {dot}, expected {want}"
                )));
            }
        }
    }
    let nu = 1.0 / (agents as f64).sqrt();
    for r in 0..agents {
        if (basis.get(r, 0) - nu).abs() > BASIS_TOL {
            return Err(CollectionError::InvalidBasis(
                "first column must be the normalized consensus direction".into(),
            ));
        }
    }
    Ok(())
}

/// Extend the consensus direction to an orthonormal basis by Gram-Schmidt
/// over the canonical vectors, in index order, skipping near-dependent
/// candidates. Deterministic.
pub fn default_basis(agents: usize) -> DenseMatrix {
    let nu = 1.0 / (agents as f64).sqrt();
    let mut cols: Vec<Vec<f64>> = vec![vec![nu; agents]];
    for cand in 0..agents {
        if cols.len() == agents {
            break;
        }
        let mut v = vec![0.0; agents];
        v[cand] = 1.0;
        for c in &cols {
            let proj: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(c.iter()) {
                *x -= proj * y;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            cols.push(v);
        }
    }
    let mut u = DenseMatrix::zeros(agents, agents);
    for (j, c) in cols.iter().enumerate() {
        u.set_column(j, c);
    }
    u
}

/// Coefficient chain for one mode: the scalars γ_j (j = 1..n−1), α_j
/// (j = 1..n−1), β_j (j = 0..n−1) and the 2×2 matrices they are the minimum
/// eigenvalues of. Vectors are indexed by j with the offsets of their lowest
/// index: `gamma[j-1] = γ_j`, `alpha[j-1] = α_j`, `beta[j] = β_j`,
/// `alpha_mats[j-1] = A_j`, `beta_mats[j] = B_j` (j = 0..n−2; β_{n−1} is the
/// scalar λ_n² − λ_{n−1}, not an eigenvalue).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeCoefficients {
    /// 0-based basis column this chain belongs to (1..N−1).
    pub mode: usize,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha_mats: Vec<[[f64; 2]; 2]>,
    pub beta_mats: Vec<[[f64; 2]; 2]>,
}

impl ModeCoefficients {
    pub fn gamma_at(&self, j: usize) -> f64 {
        self.gamma[j - 1]
    }
    pub fn alpha_at(&self, j: usize) -> f64 {
        self.alpha[j - 1]
    }
    pub fn beta_at(&self, j: usize) -> f64 {
        self.beta[j]
    }
    /// β_0: the floor the energy argument bottoms out at for this mode.
    pub fn beta_floor(&self) -> f64 {
        self.beta[0]
    }
}

/// Coefficient chains for every nonzero mode of a collection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub order: usize,
    pub modes: Vec<ModeCoefficients>,
}

fn min_eig_2x2(m: [[f64; 2]; 2]) -> f64 {
    let sym = SymMatrix::from_rows(&[m[0].to_vec(), m[1].to_vec()]).expect("2x2 symmetric");
    eigh(&sym).expect("2x2 eigendecomposition").values[0]
}

/// Run the coefficient recursion for one mode given its eigenvalue row
/// (indices 0..=n+1). No positivity gating: infeasible inputs simply produce
/// nonpositive entries, which the verifier reports with their slacks.
fn mode_coefficients(mode: usize, lam: &[f64]) -> ModeCoefficients {
    let n = lam.len() - 2;
    assert!(n >= 2, "coefficient chain needs order >= 2");
    // Indexed by j directly during construction.
    let mut gamma = vec![0.0; n]; // slots 1..=n-1 used
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n]; // slots 0..=n-1 used
    let mut alpha_mats = vec![[[0.0; 2]; 2]; n];
    let mut beta_mats = vec![[[0.0; 2]; 2]; n];

    gamma[n - 1] = 1.0;
    let a_init = [
        [2.0 * lam[n - 1] * lam[n], lam[n - 1]],
        [lam[n - 1], lam[n]],
    ];
    alpha_mats[n - 1] = a_init;
    alpha[n - 1] = min_eig_2x2(a_init);
    beta[n - 1] = lam[n] * lam[n] - lam[n - 1];

    for k in 2..=n {
        let j = n - k;
        if j >= 1 {
            gamma[j] = gamma[j + 1] + 2.0 * lam[j + 2];
            let a = [
                [2.0 * lam[j] * lam[j + 1], gamma[j] * lam[j]],
                [gamma[j] * lam[j], alpha[j + 1]],
            ];
            alpha_mats[j] = a;
            alpha[j] = min_eig_2x2(a);
        }
        let b = [
            [
                lam[j + 1] * lam[j + 1] - 2.0 * lam[j] * lam[j + 2],
                -0.5 * gamma[j + 1] * lam[j],
            ],
            [-0.5 * gamma[j + 1] * lam[j], beta[j + 1]],
        ];
        beta_mats[j] = b;
        beta[j] = min_eig_2x2(b);
    }

    ModeCoefficients {
        mode,
        gamma: gamma[1..n].to_vec(),
        alpha: alpha[1..n].to_vec(),
        beta,
        alpha_mats: alpha_mats[1..n].to_vec(),
        beta_mats: beta_mats[0..n - 1].to_vec(),
    }
}

/// Coefficient chains for all nonzero modes with no feasibility gating:
/// infeasible collections produce nonpositive entries instead of errors.
/// Lets certification report WHERE a bad collection breaks down.
pub(crate) fn raw_mode_coefficients(c: &SpectralCollection) -> Vec<ModeCoefficients> {
    (1..c.agents())
        .map(|mode| mode_coefficients(mode, &c.mode_lambdas(mode)))
        .collect()
}

/// Coefficient chains for all nonzero modes. Errors with
/// [`CollectionError::InfeasibleCollection`] if any γ, α, or β fails strict
/// positivity — the sign that the collection's eigenvalues violate the
/// spectral chain upstream.
pub fn coefficient_table(c: &SpectralCollection) -> Result<CoefficientTable> {
    let mut modes = Vec::with_capacity(c.agents() - 1);
    for mode in 1..c.agents() {
        let lam = c.mode_lambdas(mode);
        let mc = mode_coefficients(mode, &lam);
        for (name, vals) in [("gamma", &mc.gamma), ("alpha", &mc.alpha), ("beta", &mc.beta)] {
            if let Some(worst) = vals.iter().copied().fold(None::<f64>, |acc, v| {
                Some(acc.map_or(v, |a| a.min(v)))
            }) {
                if !(worst > 0.0) {
                    return Err(CollectionError::InfeasibleCollection(format!(
                        "mode {mode}: min {name} = {worst:.6e} is not strictly positive"
                    )));
                }
            }
        }
        modes.push(mc);
    }
    Ok(CoefficientTable {
        order: c.order(),
        modes,
    })
}

/// Positive root of a·r² + b·r + c = 0 with a > 0, c < 0, computed in the
/// cancellation-free form −2c/(b + sqrt(b² − 4ac)). The tiny roots deep in a
/// spectral chain would otherwise lose all their digits to b − sqrt(...).
fn positive_quadratic_root(a: f64, b: f64, c: f64) -> f64 {
    debug_assert!(a > 0.0 && c < 0.0);
    -2.0 * c / (b + (b * b - 4.0 * a * c).sqrt())
}

/// Upper bounds the next eigenvalue λ_j must stay strictly below, given the
/// chain state after λ_{j+1}: the α-matrix bound and the β-quadratic root.
fn feasibility_bounds(lam: &[f64], gamma: &[f64], alpha: &[f64], beta: &[f64], j: usize) -> (f64, f64) {
    let r1 = 2.0 * lam[j + 1] * alpha[j + 1] / (gamma[j] * gamma[j]);
    let r2 = positive_quadratic_root(
        gamma[j + 1] * gamma[j + 1],
        8.0 * lam[j + 2] * beta[j + 1],
        -4.0 * lam[j + 1] * lam[j + 1] * beta[j + 1],
    );
    (r1, r2)
}

/// Incremental chain state for one mode during synthesis.
struct ModeState {
    lam: Vec<f64>,   // indices 0..=n+1; filled from the top down
    gamma: Vec<f64>, // indexed by j
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl ModeState {
    fn start(n: usize, top: f64) -> Self {
        let mut lam = vec![0.0; n + 2];
        lam[n] = top;
        lam[n + 1] = 0.5;
        ModeState {
            lam,
            gamma: vec![0.0; n],
            alpha: vec![0.0; n],
            beta: vec![0.0; n],
        }
    }

    fn n(&self) -> usize {
        self.lam.len() - 2
    }

    /// Record the chosen λ_{n-1} and initialize the chain.
    fn init_with(&mut self, value: f64) {
        let n = self.n();
        self.lam[n - 1] = value;
        self.gamma[n - 1] = 1.0;
        self.alpha[n - 1] = min_eig_2x2([
            [2.0 * self.lam[n - 1] * self.lam[n], self.lam[n - 1]],
            [self.lam[n - 1], self.lam[n]],
        ]);
        self.beta[n - 1] = self.lam[n] * self.lam[n] - self.lam[n - 1];
    }

    /// Bounds for λ_j (j = n−k, k = 2..n−1). Also fills γ_j.
    fn bounds_for(&mut self, j: usize) -> (f64, f64) {
        self.gamma[j] = self.gamma[j + 1] + 2.0 * self.lam[j + 2];
        feasibility_bounds(&self.lam, &self.gamma, &self.alpha, &self.beta, j)
    }

    /// Record the chosen λ_j and advance the chain.
    fn assign(&mut self, j: usize, value: f64) {
        self.lam[j] = value;
        self.alpha[j] = min_eig_2x2([
            [2.0 * self.lam[j] * self.lam[j + 1], self.gamma[j] * self.lam[j]],
            [self.gamma[j] * self.lam[j], self.alpha[j + 1]],
        ]);
        self.beta[j] = min_eig_2x2([
            [
                self.lam[j + 1] * self.lam[j + 1] - 2.0 * self.lam[j] * self.lam[j + 2],
                -0.5 * self.gamma[j + 1] * self.lam[j],
            ],
            [-0.5 * self.gamma[j + 1] * self.lam[j], self.beta[j + 1]],
        ]);
    }
}

/// Free spectral assignment: the row below the top takes `margin` times each
/// mode's squared top eigenvalue; every deeper row takes `margin` times the
/// tightest feasibility bound over all modes, shared across modes. Fully
/// independent per-mode chains can decay at wildly different rates, leaving
/// the assembled matrices numerically singular in the smallest mode; the
/// shared row stays inside every mode's feasible interval while keeping the
/// matrices representable.
///
/// `top_eigs` lists λ_n for the nonzero modes (length N−1, strictly
/// positive); basis columns 1..N−1 pair with `top_eigs` in order.
pub fn synthesize_free(
    agents: usize,
    order: usize,
    top_eigs: &[f64],
    basis: Option<DenseMatrix>,
    margin: f64,
) -> Result<SpectralCollection> {
    if agents < 2 || order < 2 {
        return Err(CollectionError::InvalidOrder(format!(
            "need at least 2 agents and order 2, got N={agents}, n={order}"
        )));
    }
    if top_eigs.len() != agents - 1 {
        return Err(CollectionError::InvalidSpectrum(format!(
            "expected {} top eigenvalues, got {}",
            agents - 1,
            top_eigs.len()
        )));
    }
    if let Some(&bad) = top_eigs.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(CollectionError::InvalidSpectrum(format!(
            "top eigenvalues must be strictly positive and finite, got {bad}"
        )));
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(CollectionError::InvalidMargin(margin));
    }
    let basis = match basis {
        Some(b) => {
            validate_basis(&b, agents)?;
            b
        }
        None => default_basis(agents),
    };

    let mut rows = vec![vec![0.0; agents - 1]; order];
    let mut states: Vec<ModeState> = top_eigs
        .iter()
        .map(|&top| {
            let mut st = ModeState::start(order, top);
            st.init_with(margin * top * top);
            st
        })
        .collect();
    for k in 2..=order - 1 {
        let j = order - k;
        let tightest = states
            .iter_mut()
            .map(|st| {
                let (r1, r2) = st.bounds_for(j);
                r1.min(r2)
            })
            .fold(f64::INFINITY, f64::min);
        for st in &mut states {
            st.assign(j, margin * tightest);
        }
    }
    for (m, st) in states.iter().enumerate() {
        for k in 1..=order {
            rows[k - 1][m] = st.lam[k];
        }
    }

    let matrices: Vec<SymMatrix> = rows
        .iter()
        .map(|row| reconstruct_from_modes(&basis, row))
        .collect();
    let lambda = lambda_table(agents, order, &rows);
    let c = SpectralCollection {
        agents,
        order,
        matrices,
        basis,
        lambda,
        margin: Some(margin),
    };
    c.validate_structure()?;
    Ok(c)
}

/// Gain schedule produced by [`synthesize_graph`]: every L_k is
/// `gains[k-1]` times the base Laplacian, with the per-step ratios that
/// generated the gains. `rho_bar[j-1]` is the ratio applied between L_{j+1}
/// and L_j (j = 1..n−1); `gains[n-1]` is always 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSchedule {
    pub base_laplacian: SymMatrix,
    pub rho_bar: Vec<f64>,
    pub gains: Vec<f64>,
}

impl ScalingSchedule {
    pub fn rho_bar_at(&self, j: usize) -> f64 {
        self.rho_bar[j - 1]
    }
    pub fn gain_at(&self, k: usize) -> f64 {
        self.gains[k - 1]
    }
}

/// Graph-constrained assignment: L_n is the given Laplacian and every lower
/// index is a scalar multiple of it, the multiplier chosen as `margin` times
/// the worst per-mode feasibility ratio so that one choice serves every mode
/// at once.
pub fn synthesize_graph(
    l_graph: &SymMatrix,
    order: usize,
    margin: f64,
) -> Result<(SpectralCollection, ScalingSchedule)> {
    if order < 2 {
        return Err(CollectionError::InvalidOrder(format!(
            "order must be at least 2, got {order}"
        )));
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(CollectionError::InvalidMargin(margin));
    }
    let rep = classify_laplacian(l_graph, laplacian_tol_for(l_graph))?;
    if rep.kernel_residual > laplacian_tol_for(l_graph)
        || rep.negative_eig_excess > laplacian_tol_for(l_graph)
    {
        return Err(CollectionError::NotLaplacianClass(format!(
            "kernel residual {:.3e}, negative excess {:.3e}",
            rep.kernel_residual, rep.negative_eig_excess
        )));
    }
    if !rep.is_member {
        return Err(CollectionError::NotConnected {
            lambda2: rep.lambda2,
        });
    }
    let agents = l_graph.dim();
    let (basis, eigs) = simultaneous_eigenbasis(
        std::slice::from_ref(l_graph),
        1e-9 * l_graph.max_abs().max(1.0),
    )?;
    let mu = &eigs[0]; // ascending, mu[0] = 0 on the consensus column

    let mut states: Vec<ModeState> = (1..agents)
        .map(|m| ModeState::start(order, mu[m]))
        .collect();

    let mut rho_bar = vec![0.0; order - 1];
    let mut gains = vec![0.0; order];
    gains[order - 1] = 1.0;

    // The bound on λ_{n-1} is λ_n² per mode, so the worst ratio λ_{n-1}/λ_n
    // is the smallest λ_n.
    let rb = margin
        * states
            .iter()
            .map(|st| st.lam[order])
            .fold(f64::INFINITY, f64::min);
    rho_bar[order - 2] = rb;
    if order >= 2 {
        gains[order - 2] = rb * gains[order - 1];
    }
    for st in states.iter_mut() {
        let top = st.lam[order];
        st.init_with(rb * top);
    }

    for k in 2..=order - 1 {
        let j = order - k;
        let mut worst = f64::INFINITY;
        for st in states.iter_mut() {
            let (r1, r2) = st.bounds_for(j);
            let s = r1.min(r2);
            worst = worst.min(s / st.lam[j + 1]);
        }
        let rb = margin * worst;
        rho_bar[j - 1] = rb;
        gains[j - 1] = rb * gains[j];
        for st in states.iter_mut() {
            let v = rb * st.lam[j + 1];
            st.assign(j, v);
        }
    }

    let matrices: Vec<SymMatrix> = gains.iter().map(|&g| l_graph.scale(g)).collect();
    let rows: Vec<Vec<f64>> = (1..=order)
        .map(|k| (1..agents).map(|m| gains[k - 1] * mu[m]).collect())
        .collect();
    let lambda = lambda_table(agents, order, &rows);
    let c = SpectralCollection {
        agents,
        order,
        matrices,
        basis,
        lambda,
        margin: Some(margin),
    };
    c.validate_structure()?;
    let schedule = ScalingSchedule {
        base_laplacian: l_graph.clone(),
        rho_bar,
        gains,
    };
    Ok((c, schedule))
}

/// Verify a collection against every requirement it must satisfy: class
/// membership and basis consistency of each matrix, pairwise commutation,
/// eigenvalue-table sanity, the per-mode spectral chain (initialization plus
/// both feasibility bounds at every step, all strict), positivity of the
/// derived coefficient chains, and — when a graph is supplied — that every
/// matrix is a nonnegatively weighted Laplacian supported on that graph's
/// edges. The report carries one named check per condition with its slack.
pub fn verify_collection(c: &SpectralCollection, graph: Option<&SymMatrix>) -> CheckReport {
    let mut rep = CheckReport::new();
    let n = c.order();
    let nagents = c.agents();

    for k in 1..=n {
        let m = c.matrix(k);
        let tol = laplacian_tol_for(m);
        match classify_laplacian(m, tol) {
            Ok(r) => {
                rep.require_le(&format!("L{k}.kernel_residual"), r.kernel_residual, tol);
                rep.require_le(&format!("L{k}.negative_eig_excess"), r.negative_eig_excess, tol);
                rep.require_ge(&format!("L{k}.lambda2"), r.lambda2, tol);
            }
            Err(_) => {
                rep.require_ge(&format!("L{k}.lambda2"), f64::NAN, tol);
            }
        }
        rep.require_le(
            &format!("L{k}.basis_residual"),
            c.basis_residual(k),
            BASIS_RECONSTRUCT_TOL * m.max_abs().max(1.0),
        );
    }

    for j in 1..=n {
        for k in (j + 1)..=n {
            let lj = c.matrix(j);
            let lk = c.matrix(k);
            let p = lj.mul_dense(lk);
            let q = lk.mul_dense(lj);
            let mut worst: f64 = 0.0;
            for a in 0..nagents {
                for b in 0..nagents {
                    worst = worst.max((p.get(a, b) - q.get(a, b)).abs());
                }
            }
            let scale = (lj.max_abs() * lk.max_abs()).max(1.0);
            rep.require_le(&format!("commutator.L{j}.L{k}"), worst, 1e-9 * scale);
        }
    }

    let mut min_nontrivial = f64::INFINITY;
    for k in 1..=n {
        for mode in 1..nagents {
            min_nontrivial = min_nontrivial.min(c.lambda(k, mode));
        }
    }
    rep.require_positive("lambda.min_nontrivial", min_nontrivial);

    for mode in 1..nagents {
        let lam = c.mode_lambdas(mode);
        let mc = mode_coefficients(mode, &lam);
        let label = format!("mode{}", mode + 1);

        rep.require_positive(&format!("{label}.lambda{}", n - 1), lam[n - 1]);
        rep.require_strictly_below(
            &format!("{label}.lambda{}.init_bound", n - 1),
            lam[n - 1],
            lam[n] * lam[n],
        );

        // Re-walk the chain to expose per-step feasibility bounds. gamma and
        // the already-filled alpha/beta come from the full recursion above;
        // reindex them by j for the bound formulas.
        let mut gamma = vec![0.0; n];
        let mut alpha = vec![0.0; n];
        let mut beta = vec![0.0; n];
        for j in 1..n {
            gamma[j] = mc.gamma_at(j);
            alpha[j] = mc.alpha_at(j);
        }
        for j in 0..n {
            beta[j] = mc.beta_at(j);
        }
        for k in 2..=n - 1 {
            let j = n - k;
            let (r1, r2) = feasibility_bounds(&lam, &gamma, &alpha, &beta, j);
            rep.require_positive(&format!("{label}.lambda{j}"), lam[j]);
            rep.require_strictly_below(&format!("{label}.lambda{j}.alpha_bound"), lam[j], r1);
            rep.require_strictly_below(&format!("{label}.lambda{j}.beta_bound"), lam[j], r2);
        }

        let fold_min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        rep.require_positive(&format!("{label}.min_gamma"), fold_min(&mc.gamma));
        rep.require_positive(&format!("{label}.min_alpha"), fold_min(&mc.alpha));
        rep.require_positive(&format!("{label}.min_beta"), fold_min(&mc.beta));
    }

    if let Some(g) = graph {
        let gtol = laplacian_tol_for(g);
        for k in 1..=n {
            let m = c.matrix(k);
            let mtol = laplacian_tol_for(m).max(1e-15);
            let mut off_pattern: f64 = 0.0;
            let mut most_positive_edge: f64 = 0.0;
            for a in 0..nagents {
                for b in 0..nagents {
                    if a == b {
                        continue;
                    }
                    let edge = g.get(a, b).abs() > gtol;
                    if edge {
                        most_positive_edge = most_positive_edge.max(m.get(a, b));
                    } else {
                        off_pattern = off_pattern.max(m.get(a, b).abs());
                    }
                }
            }
            rep.require_le(&format!("L{k}.off_pattern"), off_pattern, mtol);
            rep.require_le(&format!("L{k}.edge_weight_sign"), most_positive_edge, mtol);
        }
    }

    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrixcore::parse_matrix_text;

    fn k2() -> SymMatrix {
        SymMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap()
    }

    fn p3() -> SymMatrix {
        parse_matrix_text("dim 3\n1 -1 0\n-1 2 -1\n0 -1 1\n").unwrap()
    }

    /// Smaller root of a 2x2 symmetric [[a,b],[b,c]], quadratic formula.
    fn min_eig_oracle(a: f64, b: f64, c: f64) -> f64 {
        0.5 * (a + c - ((a - c) * (a - c) + 4.0 * b * b).sqrt())
    }

    #[test]
    fn coefficients_order2_hand_values() {
        let c = SpectralCollection::from_eigen_table(
            default_basis(2),
            &[vec![1.0], vec![2.0]],
        )
        .unwrap();
        let table = coefficient_table(&c).unwrap();
        let m = &table.modes[0];
        assert_eq!(m.alpha_mats[0], [[4.0, 1.0], [1.0, 2.0]]);
        let alpha_want = 3.0 - 2.0f64.sqrt();
        assert!((m.alpha_at(1) - alpha_want).abs() < 1e-12);
        assert!((m.alpha_at(1) - min_eig_oracle(4.0, 1.0, 2.0)).abs() < 1e-12);
        assert_eq!(m.beta_at(1), 3.0);
        assert_eq!(m.gamma_at(1), 1.0);
        // Bottom of the chain: min of lambda_1^2 and beta_1.
        assert_eq!(m.beta_mats[0], [[1.0, 0.0], [0.0, 3.0]]);
        assert_eq!(m.beta_floor(), 1.0);
    }

    #[test]
    fn free_synthesis_order2_is_margin_times_square() {
        let c = synthesize_free(2, 2, &[2.0], None, 0.5).unwrap();
        // Only the initialization bound binds for order 2.
        assert!((c.lambda(1, 1) - 2.0).abs() < 1e-12);
        assert!((c.lambda(2, 1) - 2.0).abs() < 1e-12);
        assert!(verify_collection(&c, None).pass);
    }

    #[test]
    fn free_synthesis_order3_matches_quadratic_oracle() {
        let c = synthesize_free(2, 3, &[2.0], None, 0.5).unwrap();
        assert!((c.lambda(3, 1) - 2.0).abs() < 1e-15);
        assert!((c.lambda(2, 1) - 2.0).abs() < 1e-12);

        // Chain by hand: alpha_2 from the 2x2 closed form, then both bounds.
        let alpha2 = min_eig_oracle(8.0, 2.0, 2.0);
        assert!((alpha2 - (5.0 - 13.0f64.sqrt())).abs() < 1e-12);
        let gamma1 = 1.0 + 2.0 * 2.0 + 0.0; // gamma_2 + 2*lambda_3, gamma_2 = 1
        assert_eq!(gamma1, 5.0);
        let bound_a = 2.0 * 2.0 * alpha2 / (gamma1 * gamma1);
        // beta_2 = lambda_3^2 - lambda_2 = 2; quadratic r^2 + 32r - 32 = 0.
        let bound_b = (-32.0 + (32.0f64 * 32.0 + 4.0 * 32.0).sqrt()) / 2.0;
        assert!((bound_b - (12.0 * 2.0f64.sqrt() - 16.0)).abs() < 1e-12);
        let want = 0.5 * bound_a.min(bound_b);
        assert!(
            (c.lambda(1, 1) - want).abs() < 1e-12 * want,
            "lambda_1 = {}, oracle {want}",
            c.lambda(1, 1)
        );

        let table = coefficient_table(&c).unwrap();
        assert!((table.modes[0].gamma_at(1) - 5.0).abs() < 1e-12);
        assert!((table.modes[0].beta_at(2) - 2.0).abs() < 1e-12);
        assert!(verify_collection(&c, None).pass);
    }

    #[test]
    fn free_synthesis_commutes_with_distinct_modes() {
        let c = synthesize_free(3, 2, &[1.0, 2.5], None, 0.5).unwrap();
        let l1 = c.matrix(1);
        let l2 = c.matrix(2);
        let p = l1.mul_dense(l2);
        let q = l2.mul_dense(l1);
        let mut worst: f64 = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                worst = worst.max((p.get(a, b) - q.get(a, b)).abs());
            }
        }
        assert!(worst <= 1e-9, "commutator residual {worst}");
    }

    #[test]
    fn free_synthesis_validates_inputs() {
        assert!(matches!(
            synthesize_free(2, 1, &[1.0], None, 0.5),
            Err(CollectionError::InvalidOrder(_))
        ));
        assert!(matches!(
            synthesize_free(1, 2, &[], None, 0.5),
            Err(CollectionError::InvalidOrder(_))
        ));
        assert!(matches!(
            synthesize_free(2, 2, &[0.0], None, 0.5),
            Err(CollectionError::InvalidSpectrum(_))
        ));
        assert!(matches!(
            synthesize_free(2, 2, &[1.0, 2.0], None, 0.5),
            Err(CollectionError::InvalidSpectrum(_))
        ));
        assert!(matches!(
            synthesize_free(2, 2, &[1.0], None, 1.0),
            Err(CollectionError::InvalidMargin(_))
        ));
        let bad_basis = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            synthesize_free(2, 2, &[1.0], Some(bad_basis), 0.5),
            Err(CollectionError::InvalidBasis(_))
        ));
    }

    #[test]
    fn graph_synthesis_k2_hand_values() {
        let (c, sched) = synthesize_graph(&k2(), 2, 0.9).unwrap();
        // Single nontrivial eigenvalue 2: ratio bound is 2, times margin.
        assert!((sched.rho_bar_at(1) - 1.8).abs() < 1e-12);
        assert!((sched.gain_at(1) - 1.8).abs() < 1e-12);
        assert_eq!(sched.gain_at(2), 1.0);
        for a in 0..2 {
            for b in 0..2 {
                assert!((c.matrix(1).get(a, b) - 1.8 * c.matrix(2).get(a, b)).abs() < 1e-12);
            }
        }
        assert!(verify_collection(&c, Some(&k2())).pass);
    }

    #[test]
    fn graph_synthesis_p3_takes_min_over_modes() {
        let (c, sched) = synthesize_graph(&p3(), 2, 0.9).unwrap();
        // Modes 1 and 3: ratios 1 and 3; the min is 1.
        assert!((sched.rho_bar_at(1) - 0.9).abs() < 1e-12);
        assert!((c.lambda(2, 1) - 1.0).abs() < 1e-9);
        assert!((c.lambda(2, 2) - 3.0).abs() < 1e-9);
        assert!((c.lambda(1, 1) - 0.9).abs() < 1e-9);
        assert!(verify_collection(&c, Some(&p3())).pass);
    }

    #[test]
    fn graph_synthesis_rejects_disconnected() {
        let disconnected = SymMatrix::from_fn(4, |i, j| match (i, j) {
            (0, 0) | (1, 1) | (2, 2) | (3, 3) => 1.0,
            (0, 1) | (2, 3) => -1.0,
            _ => 0.0,
        });
        assert!(matches!(
            synthesize_graph(&disconnected, 2, 0.9),
            Err(CollectionError::NotConnected { .. })
        ));
        assert!(matches!(
            synthesize_graph(&SymMatrix::identity(3), 2, 0.9),
            Err(CollectionError::NotLaplacianClass(_))
        ));
    }

    #[test]
    fn boundary_eigenvalue_fails_init_strictness() {
        // lambda_1 exactly at the initialization bound lambda_2^2.
        let c = SpectralCollection::from_eigen_table(
            default_basis(2),
            &[vec![4.0], vec![2.0]],
        )
        .unwrap();
        let rep = verify_collection(&c, None);
        assert!(!rep.pass);
        let failures: Vec<&str> = rep.failures().map(|f| f.name.as_str()).collect();
        assert!(
            failures.contains(&"mode2.lambda1.init_bound"),
            "unexpected failures: {failures:?}"
        );
        // The coefficient chain degenerates (beta_1 = 0).
        assert!(matches!(
            coefficient_table(&c),
            Err(CollectionError::InfeasibleCollection(_))
        ));
    }

    #[test]
    fn decreasing_margin_decreases_every_eigenvalue() {
        let tight = synthesize_free(3, 4, &[2.0, 3.0], None, 0.7).unwrap();
        let loose = synthesize_free(3, 4, &[2.0, 3.0], None, 0.4).unwrap();
        for k in 1..4 {
            for mode in 1..3 {
                assert!(
                    loose.lambda(k, mode) < tight.lambda(k, mode),
                    "k={k} mode={mode}"
                );
            }
        }
        // The top row is pinned by the request.
        for mode in 1..3 {
            assert_eq!(loose.lambda(4, mode), tight.lambda(4, mode));
        }
    }

    #[test]
    fn default_basis_is_orthonormal_with_consensus_first() {
        for agents in 2..=7 {
            let u = default_basis(agents);
            assert!(validate_basis(&u, agents).is_ok(), "agents = {agents}");
        }
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let (c, _) = synthesize_graph(&p3(), 3, 0.9).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        let back: SpectralCollection = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn document_validation_rejects_tampering() {
        let c = synthesize_free(2, 2, &[2.0], None, 0.5).unwrap();
        let mut v: serde_json::Value = serde_json::to_value(&c).unwrap();
        v["schema_version"] = "0".into();
        assert!(serde_json::from_value::<SpectralCollection>(v.clone()).is_err());
        v["schema_version"] = COLLECTION_SCHEMA_VERSION.into();
        v["extra"] = 1.into();
        assert!(serde_json::from_value::<SpectralCollection>(v.clone()).is_err());
        v.as_object_mut().unwrap().remove("extra");
        // Negate an eigenvalue: structural validation must catch it.
        v["lambda"][1][1] = (-1.0).into();
        assert!(serde_json::from_value::<SpectralCollection>(v).is_err());
    }

    #[test]
    fn from_eigen_table_round_trips_through_verify() {
        let rows = vec![vec![0.3, 0.2], vec![1.0, 1.5]];
        let c = SpectralCollection::from_eigen_table(default_basis(3), &rows).unwrap();
        assert_eq!(c.agents(), 3);
        assert_eq!(c.order(), 2);
        assert!(verify_collection(&c, None).pass);
    }
}
