//! Row-stochastic feature propagation `P = D^-1 (A + I)`.
//!
//! `P^K` is never formed; every level is one sparse smoothing pass over a dense
//! feature matrix. Rows are summed in neighbour order, so the incremental cache and
//! a full recomputation produce bit-identical embeddings.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::GraphCsr;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagationMode {
    /// `Z = P^K X`
    Sgc,
    /// `Z = [X, PX, ..., P^K X] / (K + 1)`
    Gpr,
}

impl std::str::FromStr for PropagationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgc" => Ok(PropagationMode::Sgc),
            "gpr" => Ok(PropagationMode::Gpr),
            other => Err(Error::InvalidParameter(format!("unknown propagation mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub depth: usize,
    pub mode: PropagationMode,
}

impl PropagationConfig {
    pub fn sgc(depth: usize) -> Self {
        Self {
            depth,
            mode: PropagationMode::Sgc,
        }
    }

    pub fn gpr(depth: usize) -> Self {
        Self {
            depth,
            mode: PropagationMode::Gpr,
        }
    }

    pub fn embedding_width(&self, features: usize) -> usize {
        match self.mode {
            PropagationMode::Sgc => features,
            PropagationMode::Gpr => (self.depth + 1) * features,
        }
    }
}

/// Propagated node features together with the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    values: DenseMatrix<T>,
    config: PropagationConfig,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    /// Wraps raw values, e.g. for the no-graph case or tests.
    pub fn from_values(values: DenseMatrix<T>, config: PropagationConfig) -> Self {
        Self { values, config }
    }

    pub fn values(&self) -> &DenseMatrix<T> {
        &self.values
    }

    pub fn config(&self) -> PropagationConfig {
        self.config
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.values.row(i)
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }
}

fn check_dims<T: Scalar>(graph: &GraphCsr, features: &DenseMatrix<T>) -> Result<()> {
    if features.rows() != graph.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "feature matrix has {} rows, graph has {} nodes",
            features.rows(),
            graph.node_count()
        )));
    }
    Ok(())
}

#[inline]
fn smooth_row<T: Scalar>(graph: &GraphCsr, x: &DenseMatrix<T>, i: usize, out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::zero());
    let nbrs = graph.neighbors(i);
    if nbrs.is_empty() {
        return;
    }
    for &j in nbrs {
        for (o, &v) in out.iter_mut().zip(x.row(j)) {
            *o = *o + v;
        }
    }
    let d = T::from_usize_lossy(graph.degree(i));
    out.iter_mut().for_each(|v| *v = *v / d);
}

/// One propagation step `P X`.
pub fn smooth<T: Scalar>(graph: &GraphCsr, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    check_dims(graph, x)?;
    let mut out = DenseMatrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        smooth_row(graph, x, i, out.row_mut(i));
    }
    Ok(out)
}

fn levels<T: Scalar>(graph: &GraphCsr, features: &DenseMatrix<T>, depth: usize) -> Result<Vec<DenseMatrix<T>>> {
    check_dims(graph, features)?;
    let mut out = Vec::with_capacity(depth + 1);
    out.push(features.clone());
    for k in 0..depth {
        let next = smooth(graph, &out[k])?;
        out.push(next);
    }
    Ok(out)
}

fn gpr_row<T: Scalar>(levels: &[DenseMatrix<T>], i: usize, out: &mut [T]) {
    let scale = T::from_usize_lossy(levels.len());
    let f = levels[0].cols();
    for (k, level) in levels.iter().enumerate() {
        for (o, &v) in out[k * f..(k + 1) * f].iter_mut().zip(level.row(i)) {
            *o = v / scale;
        }
    }
}

fn assemble<T: Scalar>(levels: &[DenseMatrix<T>], config: PropagationConfig) -> EmbeddingMatrix<T> {
    let values = match config.mode {
        PropagationMode::Sgc => levels[config.depth].clone(),
        PropagationMode::Gpr => {
            let n = levels[0].rows();
            let mut z = DenseMatrix::zeros(n, config.embedding_width(levels[0].cols()));
            for i in 0..n {
                gpr_row(levels, i, z.row_mut(i));
            }
            z
        }
    };
    EmbeddingMatrix { values, config }
}

/// `P^K X` by `K` sparse smoothing passes.
pub fn propagate_sgc<T: Scalar>(
    graph: &GraphCsr,
    features: &DenseMatrix<T>,
    depth: usize,
) -> Result<EmbeddingMatrix<T>> {
    let config = PropagationConfig::sgc(depth);
    Ok(assemble(&levels(graph, features, depth)?, config))
}

/// `[X, PX, ..., P^K X] / (K + 1)`.
pub fn propagate_gpr<T: Scalar>(
    graph: &GraphCsr,
    features: &DenseMatrix<T>,
    depth: usize,
) -> Result<EmbeddingMatrix<T>> {
    let config = PropagationConfig::gpr(depth);
    Ok(assemble(&levels(graph, features, depth)?, config))
}

pub fn propagate<T: Scalar>(
    graph: &GraphCsr,
    features: &DenseMatrix<T>,
    config: PropagationConfig,
) -> Result<EmbeddingMatrix<T>> {
    Ok(assemble(&levels(graph, features, config.depth)?, config))
}

/// Keeps every intermediate level `P^k X` so that local edits only recompute the
/// rows inside the affected `K`-hop neighbourhood.
#[derive(Debug, Clone)]
pub struct PropagationCache<T> {
    levels: Vec<DenseMatrix<T>>,
    embedding: EmbeddingMatrix<T>,
}

impl<T: Scalar> PropagationCache<T> {
    pub fn new(graph: &GraphCsr, features: &DenseMatrix<T>, config: PropagationConfig) -> Result<Self> {
        let levels = levels(graph, features, config.depth)?;
        let embedding = assemble(&levels, config);
        Ok(Self { levels, embedding })
    }

    pub fn embedding(&self) -> &EmbeddingMatrix<T> {
        &self.embedding
    }

    pub fn config(&self) -> PropagationConfig {
        self.embedding.config
    }

    /// Brings the cache in line with an edited graph and feature matrix.
    ///
    /// `feature_rows` lists nodes whose feature row changed; `structural_rows` lists
    /// nodes whose adjacency row (or degree) changed. Returns the embedding rows that
    /// were recomputed.
    pub fn update(
        &mut self,
        graph: &GraphCsr,
        features: &DenseMatrix<T>,
        feature_rows: &[usize],
        structural_rows: &[usize],
    ) -> Result<Vec<usize>> {
        check_dims(graph, features)?;
        if features.cols() != self.levels[0].cols() {
            return Err(Error::DimensionMismatch("feature width changed".into()));
        }
        let config = self.config();
        let mut changed: BTreeSet<usize> = feature_rows.iter().copied().collect();
        for &i in &changed {
            self.levels[0].row_mut(i).copy_from_slice(features.row(i));
        }
        let mut touched = changed.clone();
        let width = features.cols();
        let mut buf = vec![T::zero(); width];
        for k in 1..=config.depth {
            let mut next: BTreeSet<usize> = structural_rows.iter().copied().collect();
            for &j in &changed {
                next.extend(graph.neighbors(j).iter().copied());
            }
            let (prev, cur) = self.levels.split_at_mut(k);
            let prev = &prev[k - 1];
            for &i in &next {
                smooth_row(graph, prev, i, &mut buf);
                cur[0].row_mut(i).copy_from_slice(&buf);
            }
            touched.extend(next.iter().copied());
            changed = next;
        }
        let rows: Vec<usize> = match config.mode {
            PropagationMode::Sgc => {
                for &i in &changed {
                    self.embedding.values.row_mut(i).copy_from_slice(self.levels[config.depth].row(i));
                }
                changed.into_iter().collect()
            }
            PropagationMode::Gpr => {
                for &i in &touched {
                    gpr_row(&self.levels, i, self.embedding.values.row_mut(i));
                }
                touched.into_iter().collect()
            }
        };
        Ok(rows)
    }
}
