//! Dense verification of the propagation inequalities on small graphs.
//!
//! Everything here materialises `P` and its powers explicitly, so it is limited to
//! graphs with at most [`MAX_DENSE_NODES`] nodes. The sparse propagation path never
//! depends on this module; it serves as an independent check of it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::GraphCsr;
use crate::propagation::{propagate, PropagationConfig};

pub const MAX_DENSE_NODES: usize = 64;
/// Allowed excess for the inequality and identity checks.
pub const LEMMA_TOLERANCE: f64 = 1e-10;
/// Allowed deviation of propagated row sums from one.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;

const CHECKS: [(&str, f64); 11] = [
    ("row_stochastic", STOCHASTIC_TOLERANCE),
    ("sparse_dense_agreement", LEMMA_TOLERANCE),
    ("propagated_row_norm", LEMMA_TOLERANCE),
    ("stacked_row_norm", LEMMA_TOLERANCE),
    ("telescoping_identity", LEMMA_TOLERANCE),
    ("telescoping_abs_bound", LEMMA_TOLERANCE),
    ("edge_removal_mass", LEMMA_TOLERANCE),
    ("node_removal_column_mass", LEMMA_TOLERANCE),
    ("node_removal_degree_mass", LEMMA_TOLERANCE),
    ("node_removal_sign_structure", LEMMA_TOLERANCE),
    ("removed_node_row_norm", LEMMA_TOLERANCE),
];

/// Largest observed violation of one inequality: `max(lhs - rhs)` over every
/// evaluation (negative when the inequality always held with room to spare).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub name: &'static str,
    pub evaluations: usize,
    pub max_excess: f64,
    pub tolerance: f64,
}

impl LemmaCheck {
    pub fn passed(&self) -> bool {
        self.evaluations > 0 && self.max_excess <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub n_max: usize,
    pub k_max: usize,
    pub trials: usize,
    pub seed: u64,
    pub checks: Vec<LemmaCheck>,
}

impl LemmaReport {
    pub fn new(n_max: usize, k_max: usize, trials: usize, seed: u64) -> Self {
        let checks = CHECKS
            .iter()
            .map(|&(name, tolerance)| LemmaCheck {
                name,
                evaluations: 0,
                max_excess: f64::NEG_INFINITY,
                tolerance,
            })
            .collect();
        Self {
            n_max,
            k_max,
            trials,
            seed,
            checks,
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(LemmaCheck::passed)
    }

    pub fn check(&self, name: &str) -> Option<&LemmaCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn record(&mut self, name: &str, excess: f64) {
        let c = self
            .checks
            .iter_mut()
            .find(|c| c.name == name)
            .expect("unknown lemma check");
        c.evaluations += 1;
        // NaN must surface as a failure
        c.max_excess = if excess.is_nan() { f64::INFINITY } else { c.max_excess.max(excess) };
    }
}

fn ensure_small(graph: &GraphCsr) -> Result<()> {
    if graph.node_count() > MAX_DENSE_NODES {
        return Err(Error::InvalidParameter(format!(
            "dense checks support at most {MAX_DENSE_NODES} nodes, got {}",
            graph.node_count()
        )));
    }
    Ok(())
}

/// Explicit `D^-1 A` of the self-looped graph; rows of removed nodes are zero.
pub fn propagation_matrix(graph: &GraphCsr) -> Result<DenseMatrix<f64>> {
    ensure_small(graph)?;
    let n = graph.node_count();
    let mut p = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let d = graph.degree(i) as f64;
        for &j in graph.neighbors(i) {
            p[(i, j)] = 1.0 / d;
        }
    }
    Ok(p)
}

fn degree_diag(graph: &GraphCsr, invert: bool) -> DenseMatrix<f64> {
    let n = graph.node_count();
    let mut d = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let v = graph.degree(i) as f64;
        d[(i, i)] = if invert { 1.0 / v } else { v };
    }
    d
}

fn powers(p: &DenseMatrix<f64>, k: usize) -> Result<Vec<DenseMatrix<f64>>> {
    let mut out = vec![DenseMatrix::identity(p.rows())];
    for i in 0..k {
        let next = out[i].matmul(p)?;
        out.push(next);
    }
    Ok(out)
}

fn zip_with(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>, f: impl Fn(f64, f64) -> f64) -> DenseMatrix<f64> {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    DenseMatrix::from_vec(a.rows(), a.cols(), data).expect("shapes agree")
}

fn total(a: &DenseMatrix<f64>) -> f64 {
    a.as_slice().iter().sum()
}

fn max_abs(a: &DenseMatrix<f64>) -> f64 {
    a.as_slice().iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `1' P'^(k-1) |P - P'| P^(K-k) 1` for `k = 1..=depth` after removing edge `(u, v)`.
pub fn edge_removal_mass(graph: &GraphCsr, u: usize, v: usize, depth: usize) -> Result<Vec<f64>> {
    let after = graph.remove_edge(u, v)?;
    removal_mass(graph, &after, depth)
}

fn removal_mass(before: &GraphCsr, after: &GraphCsr, depth: usize) -> Result<Vec<f64>> {
    let p = propagation_matrix(before)?;
    let q = propagation_matrix(after)?;
    let (pp, qp) = (powers(&p, depth)?, powers(&q, depth)?);
    let abs = zip_with(&p, &q, |a, b| (a - b).abs());
    (1..=depth)
        .map(|k| Ok(total(&qp[k - 1].matmul(&abs)?.matmul(&pp[depth - k])?)))
        .collect()
}

/// `sum_l e_l' D' |P - P'| P^j 1` for `j = 0..depth` after removing node `m`.
pub fn node_removal_degree_mass(graph: &GraphCsr, m: usize, depth: usize) -> Result<Vec<f64>> {
    let after = graph.remove_node(m)?;
    let p = propagation_matrix(graph)?;
    let q = propagation_matrix(&after)?;
    let pp = powers(&p, depth)?;
    let weighted = degree_diag(&after, false).matmul(&zip_with(&p, &q, |a, b| (a - b).abs()))?;
    (0..depth).map(|j| Ok(total(&weighted.matmul(&pp[j])?))).collect()
}

fn random_features(rng: &mut ChaCha8Rng, n: usize, width: usize) -> DenseMatrix<f64> {
    let mut s = DenseMatrix::zeros(n, width);
    for i in 0..n {
        let row = s.row_mut(i);
        row.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let nrm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        // half of the rows sit exactly on the unit sphere
        let target = if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.0..1.0) };
        if nrm > 0.0 {
            row.iter_mut().for_each(|v| *v *= target / nrm);
        }
    }
    s
}

fn max_row_norm_excess(a: &DenseMatrix<f64>, scale: f64) -> f64 {
    (0..a.rows()).map(|i| a.row_norm(i) * scale - 1.0).fold(f64::NEG_INFINITY, f64::max)
}

/// Row sums of `P^k`, the norm cap for `P^k S` and the stacked
/// `[S, PS, ..., P^K S] / sqrt(K + 1)`, each by both the dense and the sparse route.
pub fn check_propagation(graph: &GraphCsr, s: &DenseMatrix<f64>, k_max: usize, report: &mut LemmaReport) -> Result<()> {
    let n = graph.node_count();
    let pp = powers(&propagation_matrix(graph)?, k_max)?;
    let identity = DenseMatrix::identity(n);
    for (k, pk) in pp.iter().enumerate().skip(1) {
        let sparse = propagate(graph, &identity, PropagationConfig::sgc(k))?;
        report.record("sparse_dense_agreement", max_abs(&zip_with(sparse.values(), pk, |a, b| a - b)));
        for i in (0..n).filter(|&i| !graph.is_removed(i)) {
            let row = sparse.row(i);
            let neg = row.iter().fold(0.0f64, |m, &v| m.max(-v));
            let sum: f64 = row.iter().sum();
            report.record("row_stochastic", neg.max((sum - 1.0).abs()));
        }
    }
    let mut stacked_sq = vec![0.0; n];
    for (k, pk) in pp.iter().enumerate() {
        let dense = pk.matmul(s)?;
        let sparse = propagate(graph, s, PropagationConfig::sgc(k))?;
        report.record("sparse_dense_agreement", max_abs(&zip_with(sparse.values(), &dense, |a, b| a - b)));
        report.record("propagated_row_norm", max_row_norm_excess(&dense, 1.0));
        report.record("propagated_row_norm", max_row_norm_excess(sparse.values(), 1.0));
        for (i, acc) in stacked_sq.iter_mut().enumerate() {
            *acc += dense.row_norm(i).powi(2);
        }
        let scale = 1.0 / ((k + 1) as f64).sqrt();
        let worst = stacked_sq.iter().map(|v| v.sqrt() * scale - 1.0).fold(f64::NEG_INFINITY, f64::max);
        report.record("stacked_row_norm", worst);
        let gpr = propagate(graph, s, PropagationConfig::gpr(k))?;
        report.record("stacked_row_norm", max_row_norm_excess(gpr.values(), 1.0));
    }
    Ok(())
}

fn check_telescoping(before: &GraphCsr, after: &GraphCsr, k_max: usize, report: &mut LemmaReport) -> Result<()> {
    let p = propagation_matrix(before)?;
    let q = propagation_matrix(after)?;
    let (pp, qp) = (powers(&p, k_max)?, powers(&q, k_max)?);
    let diff = zip_with(&p, &q, |a, b| a - b);
    let abs = zip_with(&p, &q, |a, b| (a - b).abs());
    for depth in 1..=k_max {
        let lhs = zip_with(&pp[depth], &qp[depth], |a, b| a - b);
        let n = p.rows();
        let mut sum = DenseMatrix::zeros(n, n);
        let mut abs_sum = DenseMatrix::zeros(n, n);
        for k in 1..=depth {
            sum = zip_with(&sum, &qp[k - 1].matmul(&diff)?.matmul(&pp[depth - k])?, |a, b| a + b);
            abs_sum = zip_with(&abs_sum, &qp[k - 1].matmul(&abs)?.matmul(&pp[depth - k])?, |a, b| a + b);
        }
        report.record("telescoping_identity", max_abs(&zip_with(&lhs, &sum, |a, b| a - b)));
        let excess = zip_with(&lhs, &abs_sum, |a, b| a.abs() - b);
        report.record("telescoping_abs_bound", excess.as_slice().iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)));
    }
    Ok(())
}

/// Telescoping identity and the edge mass bound of 4 for removing `(u, v)`.
pub fn check_edge_removal(graph: &GraphCsr, u: usize, v: usize, k_max: usize, report: &mut LemmaReport) -> Result<()> {
    let after = graph.remove_edge(u, v)?;
    check_telescoping(graph, &after, k_max, report)?;
    for depth in 1..=k_max {
        for mass in removal_mass(graph, &after, depth)? {
            report.record("edge_removal_mass", mass - 4.0);
        }
    }
    Ok(())
}

/// Telescoping identity, column mass, degree-weighted mass, the sign pattern of
/// `|P - P'|` and the norm cap for `P'^K S` (with row `m` of `S` zeroed) for removing `m`.
pub fn check_node_removal(
    graph: &GraphCsr,
    m: usize,
    s: &DenseMatrix<f64>,
    k_max: usize,
    report: &mut LemmaReport,
) -> Result<()> {
    let after = graph.remove_node(m)?;
    let n = graph.node_count();
    check_telescoping(graph, &after, k_max, report)?;

    let p = propagation_matrix(graph)?;
    let q = propagation_matrix(&after)?;
    let qp = powers(&q, k_max)?;
    let inv_deg = degree_diag(&after, true);
    for k in 1..=k_max {
        let cols = qp[k - 1].matmul(&inv_deg)?;
        for l in 0..n {
            let mass: f64 = (0..n).map(|i| cols[(i, l)]).sum();
            report.record("node_removal_column_mass", mass - 1.0);
        }
    }

    let cap = 2.0 * graph.degree(m) as f64 - 1.0;
    for mass in node_removal_degree_mass(graph, m, k_max)? {
        report.record("node_removal_degree_mass", mass - cap);
    }

    for i in 0..n {
        for j in 0..n {
            let abs = (p[(i, j)] - q[(i, j)]).abs();
            let expected = if i == m || j == m { p[(i, j)] } else { q[(i, j)] - p[(i, j)] };
            report.record("node_removal_sign_structure", (abs - expected).abs());
        }
    }

    let mut s0 = s.clone();
    s0.row_mut(m).iter_mut().for_each(|v| *v = 0.0);
    for (k, qk) in qp.iter().enumerate() {
        let z = qk.matmul(&s0)?;
        report.record("removed_node_row_norm", max_row_norm_excess(&z, 1.0));
        if k >= 1 {
            // the removed node's row must vanish exactly
            report.record("removed_node_row_norm", z.row_norm(m));
        }
    }
    Ok(())
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Result<GraphCsr> {
    let p = rng.random_range(0.1..0.8);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    if edges.is_empty() {
        let u = rng.random_range(0..n - 1);
        edges.push((u, rng.random_range(u + 1..n)));
    }
    GraphCsr::from_edges(n, edges)
}

/// Runs every dense check on `trials` random graphs with `2..=n_max` nodes and
/// depths up to `k_max`. Inspect [`LemmaReport::passed`] for the verdict.
pub fn dense_lemma_suite(n_max: usize, k_max: usize, trials: usize, seed: u64) -> Result<LemmaReport> {
    if !(2..=MAX_DENSE_NODES).contains(&n_max) {
        return Err(Error::InvalidParameter(format!(
            "n_max must lie in 2..={MAX_DENSE_NODES}, got {n_max}"
        )));
    }
    if k_max == 0 || trials == 0 {
        return Err(Error::InvalidParameter("k_max and trials must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = LemmaReport::new(n_max, k_max, trials, seed);
    for _ in 0..trials {
        let n = rng.random_range(2..=n_max);
        let graph = random_graph(&mut rng, n)?;
        let width = rng.random_range(1..=4);
        let s = random_features(&mut rng, n, width);
        check_propagation(&graph, &s, k_max, &mut report)?;

        let edges: Vec<_> = graph.edges().collect();
        let (u, v) = edges[rng.random_range(0..edges.len())];
        check_edge_removal(&graph, u, v, k_max, &mut report)?;

        let m = rng.random_range(0..n);
        check_node_removal(&graph, m, &s, k_max, &mut report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> GraphCsr {
        let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v)));
        GraphCsr::from_edges(n, edges).unwrap()
    }

    #[test]
    fn complete_graph_edge_mass_below_four() {
        let g = complete(5);
        for depth in 1..=4 {
            for mass in edge_removal_mass(&g, 0, 1, depth).unwrap() {
                assert!(mass < 4.0, "{mass}");
            }
        }
    }

    #[test]
    fn one_step_edge_mass_by_hand() {
        // K5: both endpoint rows change from 1/5 to 1/4 on four entries and lose 1/5
        let mass = edge_removal_mass(&complete(5), 0, 1, 1).unwrap();
        let row = 3.0 * (0.25 - 0.2) + 0.2;
        assert!((mass[0] - 2.0 * (row + (0.25 - 0.2))).abs() < 1e-14);
    }

    #[test]
    fn star_center_removal_within_degree_cap() {
        let g = GraphCsr::from_edges(6, (1..6).map(|v| (0, v))).unwrap();
        let cap = 2.0 * g.degree(0) as f64 - 1.0;
        for mass in node_removal_degree_mass(&g, 0, 4).unwrap() {
            assert!(mass <= cap, "{mass} > {cap}");
        }
    }

    #[test]
    fn path_propagation_matrix() {
        let g = GraphCsr::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        let p = propagation_matrix(&g).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5, 0.0]);
        assert_eq!(p.row(1), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn small_suite_passes() {
        let r = dense_lemma_suite(8, 3, 20, 7).unwrap();
        for c in &r.checks {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn rejects_large_graphs() {
        assert!(dense_lemma_suite(65, 2, 1, 0).is_err());
        let g = GraphCsr::from_edges(65, []).unwrap();
        assert!(propagation_matrix(&g).is_err());
    }

    #[test]
    fn violations_are_reported() {
        let mut r = LemmaReport::new(2, 1, 1, 0);
        r.record("edge_removal_mass", 0.5);
        r.record("row_stochastic", f64::NAN);
        assert!(!r.check("edge_removal_mass").unwrap().passed());
        assert!(!r.check("row_stochastic").unwrap().passed());
        assert!(!r.passed());
    }
}
