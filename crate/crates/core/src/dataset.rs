use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::GraphCsr;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParameter(format!("unknown split '{other}'"))),
        }
    }
}

/// Graph, node features, class labels and the train/val/test assignment.
///
/// Removal requests turn a dataset into its successor; removed feature rows are
/// zeroed and drop out of the training set, removed nodes are tombstoned in the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    graph: GraphCsr,
    features: DenseMatrix<T>,
    labels: Vec<usize>,
    num_classes: usize,
    split: Vec<Split>,
    feature_removed: Vec<bool>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        graph: GraphCsr,
        features: DenseMatrix<T>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Vec<Split>,
    ) -> Result<Self> {
        let n = graph.node_count();
        if features.rows() != n || labels.len() != n || split.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "graph has {n} nodes but features/labels/split have {}/{}/{} rows",
                features.rows(),
                labels.len(),
                split.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::InvalidParameter("need at least two classes".into()));
        }
        if let Some((i, &c)) = labels.iter().enumerate().find(|(_, &c)| c >= num_classes) {
            return Err(Error::InvalidParameter(format!(
                "label {c} of node {i} exceeds class count {num_classes}"
            )));
        }
        let ds = Self {
            feature_removed: vec![false; n],
            graph,
            features,
            labels,
            num_classes,
            split,
        };
        if ds.training_count() == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        Ok(ds)
    }

    pub fn graph(&self) -> &GraphCsr {
        &self.graph
    }

    pub fn features(&self) -> &DenseMatrix<T> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn feature_width(&self) -> usize {
        self.features.cols()
    }

    pub fn is_feature_removed(&self, i: usize) -> bool {
        self.feature_removed[i]
    }

    /// Whether node `i` contributes a term to the training loss.
    pub fn is_training(&self, i: usize) -> bool {
        self.split[i] == Split::Train && !self.feature_removed[i] && !self.graph.is_removed(i)
    }

    pub fn training_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| self.is_training(i)).collect()
    }

    pub fn training_count(&self) -> usize {
        (0..self.node_count()).filter(|&i| self.is_training(i)).count()
    }

    /// Nodes of `split` that still exist in the graph.
    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&i| self.split[i] == split && !self.graph.is_removed(i))
            .collect()
    }

    /// Number of binary classifiers: one for two classes, one per class otherwise.
    pub fn classifier_count(&self) -> usize {
        if self.num_classes == 2 {
            1
        } else {
            self.num_classes
        }
    }

    /// `+1 / -1` targets for binary classifier `c` (one-vs-rest for multi-class;
    /// class 1 is the positive class in the two-class case).
    pub fn targets(&self, c: usize) -> Vec<T> {
        let positive = if self.num_classes == 2 { 1 } else { c };
        self.labels
            .iter()
            .map(|&l| if l == positive { T::one() } else { -T::one() })
            .collect()
    }

    /// Global row-norm cap: when the largest feature row norm exceeds 1, every row
    /// is divided by it so relative geometry between rows is preserved.
    pub fn cap_feature_norms(features: &mut DenseMatrix<T>) {
        for _ in 0..4 {
            let m = features.max_row_norm();
            if m <= T::one() {
                return;
            }
            features.scale_in_place(T::one() / m);
        }
    }

    /// Per-row cap: rows with norm above 1 are scaled to unit norm, others are kept.
    pub fn cap_each_row(features: &mut DenseMatrix<T>) {
        for i in 0..features.rows() {
            let r = features.row_norm(i);
            if r > T::one() {
                features.row_mut(i).iter_mut().for_each(|v| *v = *v / r);
                while features.row_norm(i) > T::one() {
                    features.row_mut(i).iter_mut().for_each(|v| *v = *v * (T::one() - T::epsilon()));
                }
            }
        }
    }

    pub(crate) fn with_graph(&self, graph: GraphCsr) -> Self {
        Self {
            graph,
            ..self.clone()
        }
    }

    pub(crate) fn zero_features(&mut self, i: usize) {
        self.features.row_mut(i).iter_mut().for_each(|v| *v = T::zero());
        self.feature_removed[i] = true;
    }
}
