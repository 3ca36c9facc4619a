#![allow(dead_code)]

use graph_unlearn::{
    propagate, stochastic_block_model, Dataset, EmbeddingMatrix, GraphCsr, PropagationConfig, RemovalKind,
    RemovalRequest, SbmConfig, Split,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small homophilous graph with roughly `avg_degree` neighbours per node.
pub fn sbm(n: usize, classes: usize, features: usize, avg_degree: f64, power_law: bool, seed: u64) -> Dataset<f64> {
    let cfg = SbmConfig {
        nodes: n,
        classes,
        features,
        p_in: (avg_degree * 0.8 * classes as f64 / n as f64).min(1.0),
        p_out: (avg_degree * 0.2 / n as f64).min(1.0),
        degree_exponent: power_law.then_some(2.5),
        signal: 1.0,
        noise: 1.0,
        train_fraction: 0.5,
        val_fraction: 0.1,
    };
    stochastic_block_model(&cfg, seed).unwrap()
}

/// Random graph on `n` nodes with independent edges of probability `p`.
pub fn erdos_renyi(n: usize, p: f64, rng: &mut ChaCha8Rng) -> GraphCsr {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    GraphCsr::from_edges(n, edges).unwrap()
}

/// Features with every row norm in `[0, 1]`, about half of them exactly 1.
pub fn capped_features(n: usize, width: usize, rng: &mut ChaCha8Rng) -> graph_unlearn::DenseMatrix<f64> {
    let mut data = Vec::with_capacity(n * width);
    for _ in 0..n {
        let row: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nrm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let target = if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.0..1.0) };
        data.extend(row.iter().map(|v| if nrm > 0.0 { v * target / nrm } else { 0.0 }));
    }
    let mut x = graph_unlearn::DenseMatrix::from_vec(n, width, data).unwrap();
    Dataset::cap_each_row(&mut x);
    x
}

/// A valid request of `kind` against `ds` that leaves at least one training node,
/// or `None` when no such target exists.
pub fn random_request(ds: &Dataset<f64>, kind: RemovalKind, rng: &mut ChaCha8Rng) -> Option<RemovalRequest> {
    let m = ds.training_count();
    match kind {
        RemovalKind::Edge => {
            let edges: Vec<_> = ds.graph().edges().collect();
            edges.choose(rng).map(|&(u, v)| RemovalRequest::Edge(u, v))
        }
        RemovalKind::NodeFeature | RemovalKind::Node => {
            let candidates: Vec<usize> = (0..ds.node_count())
                .filter(|&i| !ds.graph().is_removed(i) && !ds.is_feature_removed(i))
                .filter(|&i| !(ds.is_training(i) && m < 2))
                .collect();
            // favour training targets so that the training set actually shrinks
            let training: Vec<usize> = candidates.iter().copied().filter(|&i| ds.is_training(i)).collect();
            let pool = if !training.is_empty() && rng.random_bool(0.8) { &training } else { &candidates };
            let &i = pool.choose(rng)?;
            Some(if kind == RemovalKind::Node {
                RemovalRequest::Node(i)
            } else {
                RemovalRequest::NodeFeature(i)
            })
        }
    }
}

pub fn embed(ds: &Dataset<f64>, config: PropagationConfig) -> EmbeddingMatrix<f64> {
    propagate(ds.graph(), ds.features(), config).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn test_nodes(ds: &Dataset<f64>) -> Vec<usize> {
    ds.nodes_in(Split::Test)
}
