//! Property tests for the synthesizers: feasibility over the whole input
//! box, exact graph multiples, and deterministic round-trips.

use proptest::prelude::*;
use syncouple::collection::{
    synthesize_free, synthesize_graph, verify_collection, SpectralCollection,
};
use syncouple::graphs::random_connected_graph;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn free_synthesis_is_always_feasible(
        top in prop::collection::vec(0.1f64..10.0, 1..=7),
        order in 2usize..=6,
        margin in 0.1f64..0.95,
    ) {
        let agents = top.len() + 1;
        let c = synthesize_free(agents, order, &top, None, margin).unwrap();
        prop_assert!(verify_collection(&c, None).pass);
    }

    #[test]
    fn graph_collections_are_exact_multiples(
        nodes in 2usize..=10,
        order in 2usize..=5,
        seed in 0u64..1000,
    ) {
        let g = random_connected_graph(nodes, seed);
        let (c, sched) = synthesize_graph(&g, order, 0.9).unwrap();
        prop_assert!(verify_collection(&c, Some(&g)).pass);
        for k in 1..=order {
            let gain = sched.gain_at(k);
            for a in 0..nodes {
                for b in 0..nodes {
                    let want = gain * g.get(a, b);
                    let got = c.matrix(k).get(a, b);
                    prop_assert!(
                        (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                        "L_{} entry ({a},{b}): {got} vs {gain} * {}",
                        k,
                        g.get(a, b)
                    );
                }
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_round_trips(
        top in prop::collection::vec(0.2f64..5.0, 1..=5),
        order in 2usize..=5,
    ) {
        let agents = top.len() + 1;
        let a = synthesize_free(agents, order, &top, None, 0.9).unwrap();
        let b = synthesize_free(agents, order, &top, None, 0.9).unwrap();
        prop_assert_eq!(&a, &b);
        let json = serde_json::to_string(&a).unwrap();
        let back: SpectralCollection = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, a);
    }
}
