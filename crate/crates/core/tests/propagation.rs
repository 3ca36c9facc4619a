mod common;

use graph_unlearn::{
    apply_removal, propagate, DenseMatrix, GraphCsr, PropagationCache, PropagationConfig, RemovalKind,
};
use proptest::prelude::*;

const ROW_TOL: f64 = 1e-12;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = (usize, f64, u64)> {
    (1..=max_n, 0.0..0.3f64, any::<u64>())
}

fn removed_some(graph: &GraphCsr, removals: usize, seed: u64) -> GraphCsr {
    let mut rng = common::rng(seed);
    let mut g = graph.clone();
    for _ in 0..removals {
        let edges: Vec<_> = g.edges().collect();
        if rand::Rng::random_bool(&mut rng, 0.5) && !edges.is_empty() {
            let (u, v) = edges[rand::Rng::random_range(&mut rng, 0..edges.len())];
            g = g.remove_edge(u, v).unwrap();
        } else {
            let alive: Vec<usize> = (0..g.node_count()).filter(|&i| !g.is_removed(i)).collect();
            if let Some(&m) = alive.get(rand::Rng::random_range(&mut rng, 0..alive.len().max(1))) {
                g = g.remove_node(m).unwrap();
            }
        }
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smoothed_indicator_rows_are_stochastic((n, p, seed) in graph_strategy(40), removals in 0usize..4) {
        let mut rng = common::rng(seed);
        let g = removed_some(&common::erdos_renyi(n, p, &mut rng), removals, seed);
        let identity = DenseMatrix::identity(n);
        for k in 1..=4 {
            let z = propagate(&g, &identity, PropagationConfig::sgc(k)).unwrap();
            for i in 0..n {
                let row = z.row(i);
                if g.is_removed(i) {
                    prop_assert!(row.iter().all(|&v| v == 0.0));
                    continue;
                }
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                let s: f64 = row.iter().sum();
                prop_assert!((s - 1.0).abs() <= ROW_TOL, "row {} of P^{} sums to {}", i, k, s);
            }
        }
    }

    #[test]
    fn sgc_rows_stay_in_unit_ball((n, p, seed) in graph_strategy(200), width in 1usize..6) {
        let mut rng = common::rng(seed);
        let g = common::erdos_renyi(n, p.min(8.0 / n as f64), &mut rng);
        let x = common::capped_features(n, width, &mut rng);
        for k in 0..=5 {
            let z = propagate(&g, &x, PropagationConfig::sgc(k)).unwrap();
            prop_assert!(z.values().max_row_norm() <= 1.0 + ROW_TOL);
        }
    }

    #[test]
    fn gpr_rows_stay_in_unit_ball((n, p, seed) in graph_strategy(200), width in 1usize..6) {
        let mut rng = common::rng(seed);
        let g = common::erdos_renyi(n, p.min(8.0 / n as f64), &mut rng);
        let x = common::capped_features(n, width, &mut rng);
        for k in 0..=5 {
            let z = propagate(&g, &x, PropagationConfig::gpr(k)).unwrap();
            prop_assert_eq!(z.width(), (k + 1) * width);
            prop_assert!(z.values().max_row_norm() <= 1.0 + ROW_TOL);
        }
    }

    #[test]
    fn incremental_updates_match_full_recompute(
        seed in any::<u64>(),
        depth in 0usize..4,
        gpr in any::<bool>(),
        kinds in proptest::collection::vec(0u8..3, 1..8),
    ) {
        let ds = common::sbm(60, 2, 3, 4.0, false, seed);
        let config = if gpr { PropagationConfig::gpr(depth) } else { PropagationConfig::sgc(depth) };
        let mut cache = PropagationCache::new(ds.graph(), ds.features(), config).unwrap();
        let mut rng = common::rng(seed ^ 0xabc);
        let mut cur = ds;
        for k in kinds {
            let kind = [RemovalKind::NodeFeature, RemovalKind::Edge, RemovalKind::Node][k as usize];
            let Some(req) = common::random_request(&cur, kind, &mut rng) else { continue };
            let next = apply_removal(&cur, req).unwrap();
            let (feature_rows, structural_rows) = match req {
                graph_unlearn::RemovalRequest::NodeFeature(i) => (vec![i], vec![]),
                graph_unlearn::RemovalRequest::Edge(u, v) => (vec![], vec![u, v]),
                graph_unlearn::RemovalRequest::Node(m) => {
                    let mut s = cur.graph().neighbors(m).to_vec();
                    s.push(m);
                    (vec![m], s)
                }
            };
            cache.update(next.graph(), next.features(), &feature_rows, &structural_rows).unwrap();
            let full = propagate(next.graph(), next.features(), config).unwrap();
            prop_assert_eq!(cache.embedding(), &full);
            cur = next;
        }
    }
}

#[test]
fn gpr_on_fifty_nodes_respects_norm_cap() {
    let mut rng = common::rng(50);
    let g = common::erdos_renyi(50, 0.1, &mut rng);
    let x = common::capped_features(50, 4, &mut rng);
    for k in 0..=6 {
        assert!(propagate(&g, &x, PropagationConfig::gpr(k)).unwrap().values().max_row_norm() <= 1.0);
    }
}

#[test]
fn removed_node_row_is_zero_for_every_depth() {
    let ds = common::sbm(40, 2, 3, 5.0, false, 9);
    let m = (0..40).max_by_key(|&i| ds.graph().degree(i)).unwrap();
    let after = apply_removal(&ds, graph_unlearn::RemovalRequest::Node(m)).unwrap();
    for k in 0..=5 {
        let z = propagate(after.graph(), after.features(), PropagationConfig::sgc(k)).unwrap();
        assert!(z.row(m).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn propagation_is_deterministic() {
    let ds = common::sbm(120, 3, 5, 6.0, true, 4);
    let a = propagate(ds.graph(), ds.features(), PropagationConfig::gpr(3)).unwrap();
    let b = propagate(ds.graph(), ds.features(), PropagationConfig::gpr(3)).unwrap();
    assert_eq!(a, b);
}
