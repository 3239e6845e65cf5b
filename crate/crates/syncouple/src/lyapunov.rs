//! Block energy matrices and numerical certification of the synchronization
//! argument.
//!
//! For a collection L_1..L_n the disagreement dynamics admit the quadratic
//! energy V(e) = ½ eᵀM̃e whose derivative along trajectories is −eᵀH̃e plus
//! the nonlinearity's contribution. This module assembles the block matrices
//! (M₁, H₁ and their gain-scaled variants M̃, H̃), the per-mode reductions
//! that make their definiteness checkable one eigenvector at a time, and the
//! scalar gain bound that makes the energy decrease dominate a weak-Lipschitz
//! nonlinearity. Every identity and positivity claim the argument rests on
//! can be certified numerically here.
//!
//! Index conventions everywhere: L_0 is the zero matrix and L_{n+1} is half
//! the identity, so single uniform block formulas cover the boundary rows.

use crate::collection::{
    coefficient_table, raw_mode_coefficients, CollectionError, SpectralCollection,
};
use crate::matrixcore::{
    eigh, project_disagreement, symmetrized_product, DenseMatrix, MatrixError, SymMatrix,
};
use crate::report::CheckReport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Definiteness checks pass at this floor; exact zero slack is legitimate
/// (the energy floor is attained), so a small negative allowance absorbs
/// rounding in the eigensolver and in sampled quadratic forms.
pub const POSITIVITY_TOL: f64 = -1e-9;

/// Relative residual allowed when certifying the derivative identity.
pub const IDENTITY_TOL: f64 = 1e-8;

/// Relative pad applied above the raw gain bound so the returned value
/// strictly satisfies the (strict) inequality it comes from.
pub const GAIN_PAD: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LyapunovError {
    #[error("gain must be at least 1, got {0}")]
    InvalidGain(f64),
    #[error("Lipschitz constant must be nonnegative and finite, got {0}")]
    InvalidLipschitz(f64),
    #[error(transparent)]
    Collection(#[from] CollectionError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

pub type Result<T> = std::result::Result<T, LyapunovError>;

/// L_k with the boundary conventions: k = 0 gives the zero matrix, k = n+1
/// gives I/2.
fn block_l(c: &SpectralCollection, k: usize) -> SymMatrix {
    let n = c.order();
    if k == 0 {
        SymMatrix::zeros(c.agents())
    } else if k <= n {
        c.matrix(k).clone()
    } else {
        SymMatrix::scaled_identity(c.agents(), 0.5)
    }
}

/// λ_k for one mode with the same conventions (λ_0 = 0, λ_{n+1} = 1/2);
/// `lam` is the full row from [`SpectralCollection::mode_lambdas`].
fn stack_from_blocks(blocks: Vec<Vec<SymMatrix>>, agents: usize, order: usize) -> SymMatrix {
    let dim = agents * order;
    let mut rows = vec![vec![0.0; dim]; dim];
    for (r, row) in blocks.iter().enumerate() {
        for (c, blk) in row.iter().enumerate() {
            if c < r {
                continue;
            }
            for a in 0..agents {
                for b in 0..agents {
                    let v = blk.get(a, b);
                    rows[r * agents + a][c * agents + b] = v;
                    rows[c * agents + b][r * agents + a] = v;
                }
            }
        }
    }
    SymMatrix::from_rows(&rows).expect("block assembly is symmetric by construction")
}

/// The unscaled energy-rate matrix M₁: block (j,c) for j ≤ c is 2 L_j L_{c+1}
/// (so the last column holds L_j and the trailing block is L_n).
pub fn build_block_m(c: &SpectralCollection) -> Result<SymMatrix> {
    build_m_scaled(c, 1.0)
}

/// The unscaled dissipation matrix H₁: diagonal block (j,j) is
/// L_j² − 2 L_{j−1} L_{j+1}, off-diagonal (j,c) for j < c is −L_{j−1} L_{c+1}.
pub fn build_block_h(c: &SpectralCollection) -> Result<SymMatrix> {
    build_h_scaled(c, 1.0)
}

fn build_m_scaled(c: &SpectralCollection, l: f64) -> Result<SymMatrix> {
    let n = c.order();
    let mut blocks = vec![vec![SymMatrix::zeros(c.agents()); n]; n];
    for r in 1..=n {
        for col in r..=n {
            // Both indices inside the leading (n-1)-block get the gain.
            let factor = if col <= n - 1 { 2.0 * l } else { 2.0 };
            let prod = symmetrized_product(&block_l(c, r), &block_l(c, col + 1))?;
            blocks[r - 1][col - 1] = prod.scale(factor);
        }
    }
    Ok(stack_from_blocks(blocks, c.agents(), n))
}

fn build_h_scaled(c: &SpectralCollection, l: f64) -> Result<SymMatrix> {
    let n = c.order();
    let mut blocks = vec![vec![SymMatrix::zeros(c.agents()); n]; n];
    for r in 1..=n {
        let square = symmetrized_product(&block_l(c, r), &block_l(c, r))?;
        let cross = symmetrized_product(&block_l(c, r - 1), &block_l(c, r + 1))?;
        // The gain multiplies every term except the L_{n-1} correction in
        // the trailing block.
        let cross_factor = if r <= n - 1 { 2.0 * l } else { 2.0 };
        blocks[r - 1][r - 1] = square.scale(l).sub(&cross.scale(cross_factor));
        for col in (r + 1)..=n {
            let factor = if col <= n - 1 { -l } else { -1.0 };
            let prod = symmetrized_product(&block_l(c, r - 1), &block_l(c, col + 1))?;
            blocks[r - 1][col - 1] = prod.scale(factor);
        }
    }
    Ok(stack_from_blocks(blocks, c.agents(), n))
}

/// Gain-scaled pair (M̃, H̃). Gains below 1 would flip the sign structure the
/// energy argument needs, so they are rejected; l = 1 reproduces (M₁, H₁)
/// exactly.
pub fn build_tilde(c: &SpectralCollection, l: f64) -> Result<(SymMatrix, SymMatrix)> {
    if !(l >= 1.0) || !l.is_finite() {
        return Err(LyapunovError::InvalidGain(l));
    }
    Ok((build_m_scaled(c, l)?, build_h_scaled(c, l)?))
}

/// Per-mode n×n reduction of M₁ for one eigenvalue row (`lam` indices
/// 0..=n+1): entry (j,c) for j ≤ c is 2 λ_j λ_{c+1}.
pub fn per_mode_m(lam: &[f64]) -> SymMatrix {
    let n = lam.len() - 2;
    SymMatrix::from_fn(n, |r0, c0| {
        let (r, c) = (r0 + 1, c0 + 1);
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        2.0 * lam[r] * lam[c + 1]
    })
}

/// Per-mode n×n reduction of H₁: diagonal λ_j² − 2λ_{j−1}λ_{j+1},
/// off-diagonal (j,c) for j < c equal to −λ_{j−1}λ_{c+1}.
pub fn per_mode_h(lam: &[f64]) -> SymMatrix {
    let n = lam.len() - 2;
    SymMatrix::from_fn(n, |r0, c0| {
        let (r, c) = (r0 + 1, c0 + 1);
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        if r == c {
            lam[r] * lam[r] - 2.0 * lam[r - 1] * lam[r + 1]
        } else {
            -lam[r - 1] * lam[c + 1]
        }
    })
}

/// Everything the energy argument needs in one bundle: the block matrices,
/// their per-mode reductions, the gain, and the scalar floors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovPack {
    pub m1: SymMatrix,
    pub h1: SymMatrix,
    pub m_tilde: SymMatrix,
    pub h_tilde: SymMatrix,
    /// Per-mode M₁ reductions for basis columns 1..N−1, in column order.
    pub per_mode_m: Vec<SymMatrix>,
    /// Per-mode H₁ reductions, same order.
    pub per_mode_h: Vec<SymMatrix>,
    /// Scalar gain the tilde matrices were built with.
    pub l: f64,
    /// Worst per-mode energy floor β₀.
    pub beta_bar: f64,
    /// min(β̄, min per-mode λ_n²): the floor the gain surplus multiplies.
    pub beta_tilde: f64,
    /// Largest eigenvalue of Σ_k L_k.
    pub lambda_bar_max: f64,
}

impl LyapunovPack {
    /// The dissipation floor (β̄ + (l−1)β̃): eᵀH̃e ≥ floor·eᵀe on the
    /// disagreement subspace.
    pub fn dissipation_floor(&self) -> f64 {
        self.beta_bar + (self.l - 1.0) * self.beta_tilde
    }

    /// Energy value V(e) = ½ eᵀM̃e for a stacked disagreement vector.
    pub fn energy(&self, e: &[f64]) -> f64 {
        0.5 * self.m_tilde.quadratic_form(e)
    }
}

fn scalar_floors(c: &SpectralCollection) -> Result<(f64, f64)> {
    let table = coefficient_table(c)?;
    let n = c.order();
    let mut beta_bar = f64::INFINITY;
    let mut min_top_sq = f64::INFINITY;
    for mc in &table.modes {
        beta_bar = beta_bar.min(mc.beta_floor());
        let top = c.lambda(n, mc.mode);
        min_top_sq = min_top_sq.min(top * top);
    }
    Ok((beta_bar, beta_bar.min(min_top_sq)))
}

fn coupling_sum_max_eig(c: &SpectralCollection) -> Result<f64> {
    let mut sum = SymMatrix::zeros(c.agents());
    for k in 1..=c.order() {
        sum = sum.add(c.matrix(k));
    }
    let eigs = eigh(&sum)?;
    Ok(*eigs
        .values
        .last()
        .expect("eigendecomposition of a nonempty matrix"))
}

/// Smallest scalar gain that makes the energy decrease dominate a
/// weak-Lipschitz nonlinearity of constant `w`, padded so any value at or
/// above the return strictly satisfies the underlying inequality (which also
/// enforces l > 1).
pub fn gain_lower_bound(c: &SpectralCollection, w: f64) -> Result<f64> {
    if !(w >= 0.0) || !w.is_finite() {
        return Err(LyapunovError::InvalidLipschitz(w));
    }
    let (beta_bar, beta_tilde) = scalar_floors(c)?;
    if !(beta_tilde > 0.0) {
        return Err(CollectionError::InfeasibleCollection(format!(
            "energy floor {beta_tilde:.6e} is not positive"
        ))
        .into());
    }
    let lambda_bar_max = coupling_sum_max_eig(c)?;
    let raw = (w * lambda_bar_max + beta_tilde - beta_bar) / beta_tilde;
    Ok(raw.max(1.0) * (1.0 + GAIN_PAD))
}

/// Assemble the full pack for a valid collection and a gain l ≥ 1.
pub fn assemble_pack(c: &SpectralCollection, l: f64) -> Result<LyapunovPack> {
    if !(l >= 1.0) || !l.is_finite() {
        return Err(LyapunovError::InvalidGain(l));
    }
    let m1 = build_block_m(c)?;
    let h1 = build_block_h(c)?;
    let (m_tilde, h_tilde) = build_tilde(c, l)?;
    let mut pm = Vec::with_capacity(c.agents() - 1);
    let mut ph = Vec::with_capacity(c.agents() - 1);
    for mode in 1..c.agents() {
        let lam = c.mode_lambdas(mode);
        pm.push(per_mode_m(&lam));
        ph.push(per_mode_h(&lam));
    }
    let (beta_bar, beta_tilde) = scalar_floors(c)?;
    let lambda_bar_max = coupling_sum_max_eig(c)?;
    Ok(LyapunovPack {
        m1,
        h1,
        m_tilde,
        h_tilde,
        per_mode_m: pm,
        per_mode_h: ph,
        l,
        beta_bar,
        beta_tilde,
        lambda_bar_max,
    })
}

/// The coupling image Ξ_l(e): blocks 2..n of e shifted up, and
/// −l·Σ_k L_k e_k in the last slot. This is what the stacked disagreement
/// derivative looks like once the controller is substituted, so
/// eᵀ M̃ Ξ_l(e) is the energy derivative.
pub fn coupling_image(c: &SpectralCollection, l: f64, e: &[f64]) -> Vec<f64> {
    let n = c.order();
    let agents = c.agents();
    assert_eq!(e.len(), n * agents, "stack vector length mismatch");
    let mut xi = vec![0.0; n * agents];
    xi[..(n - 1) * agents].copy_from_slice(&e[agents..]);
    let mut last = vec![0.0; agents];
    for k in 1..=n {
        let lk_e = c.matrix(k).matvec(&e[(k - 1) * agents..k * agents]);
        for (acc, v) in last.iter_mut().zip(lk_e) {
            *acc += v;
        }
    }
    for (slot, v) in xi[(n - 1) * agents..].iter_mut().zip(last) {
        *slot = -l * v;
    }
    xi
}

fn sample_disagreement(
    rng: &mut ChaCha8Rng,
    order: usize,
    agents: usize,
) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..order * agents)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let proj = project_disagreement(&raw, order, agents)
            .expect("sampled vector has the right length");
        let norm: f64 = proj.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return proj.iter().map(|x| x / norm).collect();
        }
    }
}

/// Certify the derivative identity eᵀM̃Ξ_l(e) = −eᵀH̃e on random unit
/// disagreement vectors. Returns the worst relative residual
/// |eᵀM̃Ξ + eᵀH̃e| / (1 + |eᵀH̃e|); agreement at or below 1e-8 certifies.
pub fn certify_identity(c: &SpectralCollection, l: f64, trials: usize, seed: u64) -> Result<f64> {
    let (m_tilde, h_tilde) = build_tilde(c, l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let e = sample_disagreement(&mut rng, c.order(), c.agents());
        let xi = coupling_image(c, l, &e);
        let lhs: f64 = e
            .iter()
            .zip(m_tilde.matvec(&xi))
            .map(|(a, b)| a * b)
            .sum();
        let rhs = h_tilde.quadratic_form(&e);
        worst = worst.max((lhs + rhs).abs() / (1.0 + rhs.abs()));
    }
    Ok(worst)
}

/// Orthonormal basis of the disagreement subspace: every stack slot tensored
/// with the nonconsensus eigenbasis columns.
fn disagreement_basis(c: &SpectralCollection) -> DenseMatrix {
    let n = c.order();
    let agents = c.agents();
    let mut p = DenseMatrix::zeros(n * agents, n * (agents - 1));
    for k in 0..n {
        for mode in 1..agents {
            let col = k * (agents - 1) + (mode - 1);
            for a in 0..agents {
                p.set(k * agents + a, col, c.basis().get(a, mode));
            }
        }
    }
    p
}

/// min eig of PᵀXP for the disagreement basis P.
fn projected_min_eig(x: &SymMatrix, p: &DenseMatrix) -> Result<f64> {
    let xp = x.to_dense().mul(p);
    let pxp = p.transpose().mul(&xp);
    let sym = SymMatrix::from_rows(&pxp.to_rows())?;
    Ok(eigh(&sym)?.values[0])
}

/// Certify every positivity claim the energy argument uses: definiteness of
/// each per-mode M₁ and H₁ reduction, definiteness of M̃ restricted to the
/// disagreement subspace, and the dissipation floor eᵀH̃e ≥ (β̄+(l−1)β̃)eᵀe
/// there. Restriction is certified by eigendecomposition of the projected
/// matrices, with `trials` random unit disagreement vectors as an independent
/// cross-check. All checks pass at −1e-9: zero slack is attained exactly, so
/// only eigensolver rounding is forgiven. The report carries every value.
pub fn certify_positivity(
    c: &SpectralCollection,
    l: f64,
    trials: usize,
    seed: u64,
) -> Result<CheckReport> {
    if !(l >= 1.0) || !l.is_finite() {
        return Err(LyapunovError::InvalidGain(l));
    }
    let mut rep = CheckReport::new();

    for mode in 1..c.agents() {
        let lam = c.mode_lambdas(mode);
        let label = format!("mode{}", mode + 1);
        let m_min = eigh(&per_mode_m(&lam))?.values[0];
        let h_min = eigh(&per_mode_h(&lam))?.values[0];
        rep.require_ge(&format!("{label}.M.min_eig"), m_min, POSITIVITY_TOL);
        rep.require_ge(&format!("{label}.H.min_eig"), h_min, POSITIVITY_TOL);
    }

    // Floors from the ungated coefficient chain so corrupted collections
    // still get a full report instead of an error.
    let raw = raw_mode_coefficients(c);
    let n = c.order();
    let mut beta_bar = f64::INFINITY;
    let mut min_top_sq = f64::INFINITY;
    for mc in &raw {
        beta_bar = beta_bar.min(mc.beta_floor());
        let top = c.lambda(n, mc.mode);
        min_top_sq = min_top_sq.min(top * top);
    }
    let beta_tilde = beta_bar.min(min_top_sq);
    let floor = beta_bar + (l - 1.0) * beta_tilde;

    let (m_tilde, h_tilde) = build_tilde(c, l)?;
    let p = disagreement_basis(c);
    let dim = c.order() * c.agents();
    let floor_shift = SymMatrix::scaled_identity(dim, floor);
    rep.require_ge(
        "projected.M_tilde.min_eig",
        projected_min_eig(&m_tilde, &p)?,
        POSITIVITY_TOL,
    );
    rep.require_ge(
        "projected.H_tilde.floor_slack",
        projected_min_eig(&h_tilde.sub(&floor_shift), &p)?,
        POSITIVITY_TOL,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m_sample = f64::INFINITY;
    let mut h_sample = f64::INFINITY;
    for _ in 0..trials {
        let y = sample_disagreement(&mut rng, c.order(), c.agents());
        m_sample = m_sample.min(m_tilde.quadratic_form(&y));
        h_sample = h_sample.min(h_tilde.quadratic_form(&y) - floor);
    }
    if trials > 0 {
        rep.require_ge("sampled.M_tilde.min_quadratic", m_sample, POSITIVITY_TOL);
        rep.require_ge("sampled.H_tilde.floor_slack", h_sample, POSITIVITY_TOL);
    }

    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collection::{synthesize_free, synthesize_graph, SpectralCollection};
    use crate::collection::default_basis;
    use crate::graphs::complete_graph;

    fn k2() -> SymMatrix {
        SymMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap()
    }

    fn unit_collection() -> SpectralCollection {
        // N = 2, lambda_1 = 1, lambda_2 = 2 on the K2 pattern.
        SpectralCollection::from_eigen_table(default_basis(2), &[vec![1.0], vec![2.0]]).unwrap()
    }

    #[test]
    fn order2_blocks_match_remark_form() {
        let c = unit_collection();
        let m = build_block_m(&c).unwrap();
        let l1 = c.matrix(1);
        let l2 = c.matrix(2);
        let prod = symmetrized_product(l1, l2).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert_eq!(m.get(a, b), 2.0 * prod.get(a, b), "top-left");
                assert_eq!(m.get(a, b + 2), l1.get(a, b), "off-diagonal");
                assert_eq!(m.get(a + 2, b + 2), l2.get(a, b), "trailing");
            }
        }
        let h = build_block_h(&c).unwrap();
        let l1sq = symmetrized_product(l1, l1).unwrap();
        let l2sq = symmetrized_product(l2, l2).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert_eq!(h.get(a, b), l1sq.get(a, b));
                assert_eq!(h.get(a, b + 2), 0.0, "first block row has no coupling");
                assert_eq!(h.get(a + 2, b + 2), l2sq.get(a, b) - l1.get(a, b));
            }
        }
    }

    #[test]
    fn blocks_annihilate_consensus() {
        let c = synthesize_free(4, 3, &[1.0, 2.0, 3.0], None, 0.5).unwrap();
        let m = build_block_m(&c).unwrap();
        let h = build_block_h(&c).unwrap();
        for k in 0..3 {
            let mut e = vec![0.0; 12];
            for a in 0..4 {
                e[k * 4 + a] = 1.0;
            }
            for v in m.matvec(&e) {
                assert!(v.abs() < 1e-12);
            }
            for v in h.matvec(&e) {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn per_mode_h_order2_hand_values() {
        // lambda_1 = 1, lambda_2 = 2: diag(1, 3), zero off-diagonal.
        let lam = [0.0, 1.0, 2.0, 0.5];
        let h = per_mode_h(&lam);
        assert_eq!(h.to_rows(), vec![vec![1.0, 0.0], vec![0.0, 3.0]]);
        let m = per_mode_m(&lam);
        assert_eq!(m.to_rows(), vec![vec![4.0, 1.0], vec![1.0, 2.0]]);
    }

    #[test]
    fn tilde_at_gain_one_degenerates() {
        let c = synthesize_free(3, 3, &[1.5, 2.5], None, 0.5).unwrap();
        let (mt, ht) = build_tilde(&c, 1.0).unwrap();
        assert_eq!(mt.to_rows(), build_block_m(&c).unwrap().to_rows());
        assert_eq!(ht.to_rows(), build_block_h(&c).unwrap().to_rows());
        assert!(matches!(
            build_tilde(&c, 0.5),
            Err(LyapunovError::InvalidGain(_))
        ));
    }

    #[test]
    fn mode_decomposition_reassembles_quadratic_form() {
        let c = synthesize_free(4, 3, &[1.0, 2.0, 3.5], None, 0.6).unwrap();
        let pack = assemble_pack(&c, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let y = sample_disagreement(&mut rng, 3, 4);
            let direct = pack.m1.quadratic_form(&y);
            let mut via_modes = 0.0;
            for mode in 1..4 {
                let coords: Vec<f64> = (0..3)
                    .map(|k| {
                        (0..4)
                            .map(|a| c.basis().get(a, mode) * y[k * 4 + a])
                            .sum()
                    })
                    .collect();
                via_modes += pack.per_mode_m[mode - 1].quadratic_form(&coords);
            }
            assert!(
                (direct - via_modes).abs() <= 1e-9 * (1.0 + direct.abs()),
                "direct {direct}, via modes {via_modes}"
            );
        }
    }

    #[test]
    fn gain_bound_zero_lipschitz_is_one_plus_pad() {
        let c = unit_collection();
        let bound = gain_lower_bound(&c, 0.0).unwrap();
        assert!((bound - (1.0 + GAIN_PAD)).abs() < 1e-12);
    }

    #[test]
    fn gain_bound_hand_iteration() {
        // beta_bar = min(lambda_1^2, beta_1) = min(1, 3) = 1; beta_tilde =
        // min(1, 4) = 1; max eig(L_1 + L_2) = 3. w = 1 gives (3 + 1 - 1)/1.
        let c = unit_collection();
        let bound = gain_lower_bound(&c, 1.0).unwrap();
        assert!((bound - 3.0 * (1.0 + GAIN_PAD)).abs() < 1e-9);
        // Nondecreasing in w.
        let lower = gain_lower_bound(&c, 0.5).unwrap();
        assert!(lower < bound);
        assert!(matches!(
            gain_lower_bound(&c, -0.1),
            Err(LyapunovError::InvalidLipschitz(_))
        ));
    }

    #[test]
    fn identity_hand_oracle_on_k2() {
        let (c, _) = synthesize_graph(&k2(), 2, 0.9).unwrap();
        let l = 2.0;
        // e = (1,-1,0,0) with L1 = 1.8*K2: both sides collapse to
        // -l*e1'L1^2 e1 = -2 * 3.24*2 * 4 = -51.84.
        let e = vec![1.0, -1.0, 0.0, 0.0];
        let (mt, ht) = build_tilde(&c, l).unwrap();
        let xi = coupling_image(&c, l, &e);
        let lhs: f64 = e.iter().zip(mt.matvec(&xi)).map(|(a, b)| a * b).sum();
        let rhs = ht.quadratic_form(&e);
        assert!((lhs + 51.84).abs() < 1e-10, "lhs = {lhs}");
        assert!((lhs + rhs).abs() < 1e-10);
    }

    #[test]
    fn identity_vanishes_on_consensus() {
        let c = synthesize_free(3, 2, &[1.0, 2.0], None, 0.5).unwrap();
        let e = vec![2.0, 2.0, 2.0, -1.0, -1.0, -1.0];
        let (mt, ht) = build_tilde(&c, 1.5).unwrap();
        let xi = coupling_image(&c, 1.5, &e);
        let lhs: f64 = e.iter().zip(mt.matvec(&xi)).map(|(a, b)| a * b).sum();
        assert!(lhs.abs() < 1e-12);
        assert!(ht.quadratic_form(&e).abs() < 1e-12);
    }

    #[test]
    fn identity_certifies_on_random_collections() {
        let c = synthesize_free(5, 4, &[1.0, 2.0, 3.0, 4.0], None, 0.5).unwrap();
        let l = gain_lower_bound(&c, 0.3).unwrap();
        let residual = certify_identity(&c, l, 100, 11).unwrap();
        assert!(residual <= IDENTITY_TOL, "residual = {residual:e}");
    }

    #[test]
    fn positivity_certifies_valid_collection() {
        let (c, _) = synthesize_graph(&complete_graph(4), 3, 0.9).unwrap();
        let l = gain_lower_bound(&c, 1.0).unwrap();
        let rep = certify_positivity(&c, l, 200, 3).unwrap();
        assert!(rep.pass, "failures: {:?}", rep.failures().collect::<Vec<_>>());
    }

    #[test]
    fn positivity_flags_corrupted_initialization() {
        // lambda_1 = 1.01 * lambda_2^2 violates the initialization bound:
        // the trailing per-mode H entry goes negative.
        let c = SpectralCollection::from_eigen_table(
            default_basis(2),
            &[vec![1.01 * 4.0], vec![2.0]],
        )
        .unwrap();
        let rep = certify_positivity(&c, 2.0, 50, 5).unwrap();
        assert!(!rep.pass);
        let failed: Vec<&str> = rep.failures().map(|f| f.name.as_str()).collect();
        assert!(failed.contains(&"mode2.H.min_eig"), "failed: {failed:?}");
    }

    #[test]
    fn energy_floor_matches_projected_slack() {
        // For K2 with l = floor the slack is exactly zero; the projected
        // eigenvalue must sit within rounding of it.
        let (c, _) = synthesize_graph(&k2(), 2, 0.9).unwrap();
        let pack = assemble_pack(&c, 3.0).unwrap();
        let p = disagreement_basis(&c);
        let shift = SymMatrix::scaled_identity(4, pack.dissipation_floor());
        let slack = projected_min_eig(&pack.h_tilde.sub(&shift), &p).unwrap();
        assert!(slack >= POSITIVITY_TOL);
    }

    #[test]
    fn pack_scalars_match_hand_values() {
        let c = unit_collection();
        let pack = assemble_pack(&c, 2.0).unwrap();
        assert_eq!(pack.beta_bar, 1.0);
        assert_eq!(pack.beta_tilde, 1.0);
        assert!((pack.lambda_bar_max - 3.0).abs() < 1e-12);
        assert!((pack.dissipation_floor() - 2.0).abs() < 1e-12);
        let e = vec![1.0, -1.0, 0.0, 0.0];
        // L1 realizes eigenvalue 1 on the K2 pattern, i.e. L1 = K2/2, so the
        // top-left block of M_tilde is 2l*L1L2 = 4*K2; the quadratic form on
        // (1,-1) is 16 and V = 8.
        assert!((pack.energy(&e) - 8.0).abs() < 1e-12);
    }
}
