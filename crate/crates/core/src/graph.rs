//! Undirected graphs with self-loops, stored in compressed sparse row form.
//!
//! The stored adjacency is always `A + I`. Edits return new graphs; removed nodes keep
//! their index (tombstoned) so node ids stay stable across a removal stream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphCsr {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    deg: Vec<usize>,
    removed: Vec<bool>,
}

impl GraphCsr {
    /// Builds `A + I` from an undirected edge list.
    ///
    /// Each edge may be listed in either or both directions; duplicates collapse.
    /// Entries `(u, u)` are accepted and ignored since every node carries a self-loop.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut adj: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for (u, v) in edges {
            for x in [u, v] {
                if x >= n {
                    return Err(Error::NodeOutOfRange { node: x, n });
                }
            }
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
        }
        Ok(Self::from_sorted_rows(adj, vec![false; n]))
    }

    fn from_sorted_rows(rows: Vec<Vec<usize>>, removed: Vec<bool>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        let mut deg = Vec::with_capacity(n);
        for (i, row) in rows.into_iter().enumerate() {
            // removed nodes keep the degree-1 convention
            deg.push(if removed[i] { 1 } else { row.len() });
            col_idx.extend(row);
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            deg,
            removed,
        }
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Diagonal entry of the self-looped degree matrix.
    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.deg[i]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.deg
    }

    /// Sorted neighbours of `i` in `A + I`, including `i` itself unless removed.
    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    #[inline]
    pub fn is_removed(&self, i: usize) -> bool {
        self.removed[i]
    }

    pub fn removed_mask(&self) -> &[bool] {
        &self.removed
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Number of undirected edges, self-loops excluded.
    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Undirected edges `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::NodeOutOfRange { node: i, n: self.n });
        }
        if self.removed[i] {
            return Err(Error::NodeRemoved(i));
        }
        Ok(())
    }

    fn rows(&self) -> Vec<Vec<usize>> {
        (0..self.n).map(|i| self.neighbors(i).to_vec()).collect()
    }

    /// Deletes the undirected edge `(u, v)`; both endpoint degrees drop by one.
    pub fn remove_edge(&self, u: usize, v: usize) -> Result<Self> {
        self.check_node(u)?;
        self.check_node(v)?;
        if u == v {
            return Err(Error::SelfLoop(u));
        }
        if !self.has_edge(u, v) {
            return Err(Error::MissingEdge(u, v));
        }
        let mut rows = self.rows();
        rows[u].retain(|&x| x != v);
        rows[v].retain(|&x| x != u);
        Ok(Self::from_sorted_rows(rows, self.removed.clone()))
    }

    /// Empties row and column `m` (self-loop included) and tombstones the node.
    ///
    /// The removed node keeps degree 1 by convention; it has no neighbours, so the
    /// value never enters a propagation step.
    pub fn remove_node(&self, m: usize) -> Result<Self> {
        self.check_node(m)?;
        let mut rows = self.rows();
        let nbrs = std::mem::take(&mut rows[m]);
        for j in nbrs {
            if j != m {
                rows[j].retain(|&x| x != m);
            }
        }
        let mut removed = self.removed.clone();
        removed[m] = true;
        Ok(Self::from_sorted_rows(rows, removed))
    }

    /// Verifies symmetry, self-loops and degree bookkeeping.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.row_ptr.len() != self.n + 1 || self.deg.len() != self.n || self.removed.len() != self.n {
            return bad("array lengths disagree with node count".into());
        }
        for i in 0..self.n {
            let row = self.neighbors(i);
            if !row.windows(2).all(|w| w[0] < w[1]) {
                return bad(format!("row {i} not strictly sorted"));
            }
            if self.removed[i] {
                if !row.is_empty() || self.deg[i] != 1 {
                    return bad(format!("removed node {i} must have an empty row and degree 1"));
                }
                continue;
            }
            if row.binary_search(&i).is_err() {
                return bad(format!("node {i} lacks its self-loop"));
            }
            if self.deg[i] != row.len() {
                return bad(format!("degree of node {i} is {}, row has {}", self.deg[i], row.len()));
            }
            for &j in row {
                if self.removed[j] || !self.has_edge(j, i) {
                    return bad(format!("edge ({i}, {j}) has no valid mirror"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> GraphCsr {
        GraphCsr::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn builds_with_self_loops_and_dedup() {
        let g = GraphCsr::from_edges(3, [(0, 1), (1, 0), (1, 2), (2, 2)]).unwrap();
        assert_eq!(g.degrees(), &[2, 3, 2]);
        assert_eq!(g.neighbors(1), &[0, 1, 2]);
        assert_eq!(g.edge_count(), 2);
        g.check_invariants().unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        assert_eq!(
            GraphCsr::from_edges(2, [(0, 2)]),
            Err(Error::NodeOutOfRange { node: 2, n: 2 })
        );
    }

    #[test]
    fn remove_edge_updates_degrees() {
        let g = triangle().remove_edge(0, 1).unwrap();
        assert_eq!(g.degrees(), &[2, 2, 3]);
        assert!(!g.has_edge(0, 1) && !g.has_edge(1, 0));
        assert!(g.has_edge(0, 0) && g.has_edge(1, 1));
        g.check_invariants().unwrap();
    }

    #[test]
    fn remove_edge_twice_fails() {
        let g = triangle().remove_edge(0, 1).unwrap();
        assert_eq!(g.remove_edge(1, 0), Err(Error::MissingEdge(1, 0)));
    }

    #[test]
    fn remove_self_loop_fails() {
        assert_eq!(triangle().remove_edge(2, 2), Err(Error::SelfLoop(2)));
    }

    #[test]
    fn star_center_removal() {
        let g = GraphCsr::from_edges(5, (1..5).map(|i| (0, i))).unwrap();
        let g2 = g.remove_node(0).unwrap();
        assert_eq!(g2.degrees(), &[1, 1, 1, 1, 1]);
        assert!(g2.is_removed(0));
        assert!(g2.neighbors(0).is_empty());
        for i in 1..5 {
            assert_eq!(g2.neighbors(i), &[i]);
        }
        g2.check_invariants().unwrap();
        assert_eq!(g2.remove_node(0), Err(Error::NodeRemoved(0)));
        assert_eq!(g2.remove_edge(0, 1), Err(Error::NodeRemoved(0)));
    }

    #[test]
    fn isolated_node_removal_touches_only_its_row() {
        let g = GraphCsr::from_edges(4, [(0, 1), (1, 2)]).unwrap();
        let g2 = g.remove_node(3).unwrap();
        assert_eq!(g2.degrees(), g.degrees());
        for i in 0..3 {
            assert_eq!(g.neighbors(i), g2.neighbors(i));
        }
        assert_eq!(g2.removed_mask(), &[false, false, false, true]);
    }
}
