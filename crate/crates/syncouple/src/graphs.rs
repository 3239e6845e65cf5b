//! Laplacian constructors for the usual test topologies and for random
//! connected graphs.

use crate::matrixcore::{classify_laplacian, laplacian_tol_for, MatrixError, SymMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Laplacian of an undirected graph given as weighted edges (i, j, w).
/// Weights must be positive; duplicate edges accumulate.
pub fn laplacian_from_edges(
    nodes: usize,
    edges: &[(usize, usize, f64)],
) -> Result<SymMatrix, MatrixError> {
    let mut rows = vec![vec![0.0; nodes]; nodes];
    for &(i, j, w) in edges {
        if i >= nodes || j >= nodes || i == j {
            return Err(MatrixError::InvalidMatrix(format!(
                "edge ({i}, {j}) out of range for {nodes} nodes"
            )));
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(MatrixError::InvalidMatrix(format!(
                "edge ({i}, {j}) has nonpositive weight {w}"
            )));
        }
        rows[i][j] -= w;
        rows[j][i] -= w;
        rows[i][i] += w;
        rows[j][j] += w;
    }
    SymMatrix::from_rows(&rows)
}

/// Path graph 0-1-...-(n-1), unit weights.
pub fn path_graph(nodes: usize) -> SymMatrix {
    let edges: Vec<(usize, usize, f64)> = (1..nodes).map(|i| (i - 1, i, 1.0)).collect();
    laplacian_from_edges(nodes, &edges).expect("path edges are valid")
}

/// Cycle graph, unit weights. Needs at least 3 nodes.
pub fn cycle_graph(nodes: usize) -> SymMatrix {
    assert!(nodes >= 3, "cycle needs at least 3 nodes");
    let mut edges: Vec<(usize, usize, f64)> = (1..nodes).map(|i| (i - 1, i, 1.0)).collect();
    edges.push((nodes - 1, 0, 1.0));
    laplacian_from_edges(nodes, &edges).expect("cycle edges are valid")
}

/// Complete graph, unit weights.
pub fn complete_graph(nodes: usize) -> SymMatrix {
    let mut edges = Vec::new();
    for i in 0..nodes {
        for j in (i + 1)..nodes {
            edges.push((i, j, 1.0));
        }
    }
    laplacian_from_edges(nodes, &edges).expect("complete-graph edges are valid")
}

/// Star graph with node 0 at the hub, unit weights.
pub fn star_graph(nodes: usize) -> SymMatrix {
    let edges: Vec<(usize, usize, f64)> = (1..nodes).map(|i| (0, i, 1.0)).collect();
    laplacian_from_edges(nodes, &edges).expect("star edges are valid")
}

/// Random connected unit-weight graph: Erdos-Renyi with edge probability
/// 2 ln(N)/N (capped at 1), resampled until connected. Deterministic in the
/// seed. The probability sits safely above the connectivity threshold
/// ln(N)/N, so resampling terminates quickly.
pub fn random_connected_graph(nodes: usize, seed: u64) -> SymMatrix {
    assert!(nodes >= 2, "need at least 2 nodes");
    let p = (2.0 * (nodes as f64).ln() / nodes as f64).min(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut edges = Vec::new();
        for i in 0..nodes {
            for j in (i + 1)..nodes {
                if rng.random_range(0.0..1.0) < p {
                    edges.push((i, j, 1.0));
                }
            }
        }
        let lap = laplacian_from_edges(nodes, &edges).expect("sampled edges are valid");
        if is_connected(&lap) {
            return lap;
        }
    }
}

/// Connectivity via the Laplacian class test (algebraic connectivity > 0).
pub fn is_connected(laplacian: &SymMatrix) -> bool {
    classify_laplacian(laplacian, laplacian_tol_for(laplacian))
        .map(|r| r.is_member)
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrixcore::eigh;

    #[test]
    fn path_and_cycle_spectra() {
        // P3 eigenvalues 0, 1, 3; C4 eigenvalues 0, 2, 2, 4.
        let p = eigh(&path_graph(3)).unwrap().values;
        assert!((p[0]).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12 && (p[2] - 3.0).abs() < 1e-12);
        let c = eigh(&cycle_graph(4)).unwrap().values;
        let want = [0.0, 2.0, 2.0, 4.0];
        for (got, want) in c.iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn complete_graph_spectrum_is_flat() {
        let vals = eigh(&complete_graph(5)).unwrap().values;
        assert!(vals[0].abs() < 1e-12);
        for &v in &vals[1..] {
            assert!((v - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn star_graph_spectrum() {
        // Star on N nodes: 0, 1 (N-2 times), N.
        let vals = eigh(&star_graph(6)).unwrap().values;
        assert!(vals[0].abs() < 1e-12);
        for &v in &vals[1..5] {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!((vals[5] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn random_graphs_are_connected_and_reproducible() {
        for seed in 0..20 {
            let g = random_connected_graph(10, seed);
            assert!(is_connected(&g), "seed {seed}");
            let again = random_connected_graph(10, seed);
            assert_eq!(g.to_rows(), again.to_rows(), "seed {seed}");
        }
        let a = random_connected_graph(10, 1);
        let b = random_connected_graph(10, 2);
        assert_ne!(a.to_rows(), b.to_rows(), "different seeds should differ");
    }

    #[test]
    fn edge_list_validation() {
        assert!(laplacian_from_edges(3, &[(0, 3, 1.0)]).is_err());
        assert!(laplacian_from_edges(3, &[(0, 0, 1.0)]).is_err());
        assert!(laplacian_from_edges(3, &[(0, 1, -1.0)]).is_err());
        assert!(laplacian_from_edges(3, &[(0, 1, f64::NAN)]).is_err());
        // Duplicate edges accumulate weight.
        let l = laplacian_from_edges(2, &[(0, 1, 1.0), (0, 1, 0.5)]).unwrap();
        assert_eq!(l.get(0, 1), -1.5);
        assert_eq!(l.get(0, 0), 1.5);
    }
}
