//! Removal requests, the one-step Newton update and sequential removal streams.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::certification::{bound_from_step, operator_norm, worst_case_bound, BudgetAccountant, RemovalKind};
use crate::dataset::Dataset;
use crate::dense::{hessian_solve, norm, sub};
use crate::error::{Error, Result};
use crate::graph::GraphCsr;
use crate::model::{derive_seed, train, ModelState, TrainConfig};
use crate::oracle::true_residual;
use crate::propagation::{EmbeddingMatrix, PropagationCache, PropagationConfig, PropagationMode};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalRequest {
    /// Zero the feature row and drop the label of a node; the graph is untouched.
    NodeFeature(usize),
    /// Delete one undirected edge.
    Edge(usize, usize),
    /// Delete a node together with its features, label and incident edges.
    Node(usize),
}

impl RemovalRequest {
    pub fn kind(&self) -> RemovalKind {
        match self {
            RemovalRequest::NodeFeature(_) => RemovalKind::NodeFeature,
            RemovalRequest::Edge(..) => RemovalKind::Edge,
            RemovalRequest::Node(_) => RemovalKind::Node,
        }
    }

    /// Self-looped degree of the target before removal; for an edge, the larger endpoint degree.
    pub fn target_degree(&self, graph: &GraphCsr) -> usize {
        match *self {
            RemovalRequest::NodeFeature(i) | RemovalRequest::Node(i) => graph.degree(i),
            RemovalRequest::Edge(u, v) => graph.degree(u).max(graph.degree(v)),
        }
    }

    /// Node whose own training term may disappear (none for edges).
    pub fn target_node(&self) -> Option<usize> {
        match *self {
            RemovalRequest::NodeFeature(i) | RemovalRequest::Node(i) => Some(i),
            RemovalRequest::Edge(..) => None,
        }
    }

    /// `(feature rows, structural rows)` touched by the request in `graph`.
    fn affected_rows(&self, graph: &GraphCsr) -> (Vec<usize>, Vec<usize>) {
        match *self {
            RemovalRequest::NodeFeature(i) => (vec![i], vec![]),
            RemovalRequest::Edge(u, v) => (vec![], vec![u, v]),
            RemovalRequest::Node(m) => {
                let mut s = graph.neighbors(m).to_vec();
                s.push(m);
                (vec![m], s)
            }
        }
    }
}

impl std::fmt::Display for RemovalRequest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RemovalRequest::NodeFeature(i) => write!(f, "node-feature {i}"),
            RemovalRequest::Edge(u, v) => write!(f, "edge {u}-{v}"),
            RemovalRequest::Node(i) => write!(f, "node {i}"),
        }
    }
}

fn check_node<T: Scalar>(dataset: &Dataset<T>, i: usize) -> Result<()> {
    let n = dataset.node_count();
    if i >= n {
        return Err(Error::NodeOutOfRange { node: i, n });
    }
    if dataset.graph().is_removed(i) {
        return Err(Error::NodeRemoved(i));
    }
    Ok(())
}

/// Produces the dataset that remains after `request`.
///
/// The training set shrinks only when the target node was a training node.
pub fn apply_removal<T: Scalar>(dataset: &Dataset<T>, request: RemovalRequest) -> Result<Dataset<T>> {
    match request {
        RemovalRequest::NodeFeature(i) => {
            check_node(dataset, i)?;
            if dataset.is_feature_removed(i) {
                return Err(Error::FeaturesRemoved(i));
            }
            let mut out = dataset.clone();
            out.zero_features(i);
            Ok(out)
        }
        RemovalRequest::Edge(u, v) => Ok(dataset.with_graph(dataset.graph().remove_edge(u, v)?)),
        RemovalRequest::Node(m) => {
            check_node(dataset, m)?;
            let mut out = dataset.with_graph(dataset.graph().remove_node(m)?);
            out.zero_features(m);
            Ok(out)
        }
    }
}

/// Outcome of one removal request.
///
/// Norms and bounds of multi-class models aggregate the one-vs-rest classifiers:
/// `delta_norm` and `newton_step_norm` are Frobenius norms over classifiers, while
/// residual bounds and the true residual are sums of per-classifier values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnlearnReport<T> {
    pub request: RemovalRequest,
    pub target_degree: usize,
    pub training_before: usize,
    pub training_after: usize,
    pub delta_norm: T,
    pub newton_step_norm: T,
    /// `None` where no closed form applies (GPR edge/node removal, too few points).
    pub worst_case_bound: Option<T>,
    pub data_dependent_bound: T,
    pub true_residual: Option<T>,
    /// Accumulated bound before this request.
    pub budget_before: T,
    /// Accumulated bound after this request (zero after a retrain).
    pub budget_after: T,
    pub retrained: bool,
    pub update_time: Duration,
    pub retrain_time: Option<Duration>,
}

fn check_embeddings<T: Scalar>(model: &ModelState<T>, ds: &Dataset<T>, z: &EmbeddingMatrix<T>) -> Result<()> {
    if z.rows() != ds.node_count() || z.width() != model.width() {
        return Err(Error::DimensionMismatch(format!(
            "embedding {}x{} vs {} nodes and model width {}",
            z.rows(),
            z.width(),
            ds.node_count(),
            model.width()
        )));
    }
    Ok(())
}

/// Newton update `w- = w* + H^-1 Delta` with `Delta = grad L(w*, D) - grad L(w*, D')`
/// and `H` the Hessian of `L(., D')` at `w*`.
///
/// Both gradients carry the same stored noise `b`, so the `b . w` terms cancel in
/// `Delta`. `true_residual` in the report is left empty.
pub fn unlearn<T: Scalar>(
    model: &ModelState<T>,
    before: &Dataset<T>,
    after: &Dataset<T>,
    z_before: &EmbeddingMatrix<T>,
    z_after: &EmbeddingMatrix<T>,
    request: RemovalRequest,
) -> Result<(ModelState<T>, UnlearnReport<T>)> {
    check_embeddings(model, before, z_before)?;
    check_embeddings(model, after, z_after)?;
    if z_before.config() != z_after.config() {
        return Err(Error::DimensionMismatch("embeddings built with different propagation settings".into()));
    }
    let m_before = before.training_count();
    let m_after = after.training_count();
    if m_after == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    let gamma2 = model.loss().constants::<T>().gamma2;
    let train_after = after.training_nodes();
    let mut op_norm = None;

    let mut weights = Vec::with_capacity(model.classifiers().len());
    let (mut delta_sq, mut step_sq, mut dd_bound) = (T::zero(), T::zero(), T::zero());
    for (c, clf) in model.classifiers().iter().enumerate() {
        let w = &clf.weights;
        let obj_before = model.objective(c, before, z_before)?;
        let obj_after = model.objective(c, after, z_after)?;
        let delta = sub(&obj_before.gradient(w), &obj_after.gradient(w));
        let step = if delta.iter().all(|&v| v == T::zero()) {
            vec![T::zero(); delta.len()]
        } else {
            hessian_solve(&obj_after.hessian(w), &delta)?
        };
        delta_sq = delta_sq + norm(&delta).powi(2);
        step_sq = step_sq + norm(&step).powi(2);
        if gamma2 > T::zero() && step.iter().any(|&v| v != T::zero()) {
            let op = match op_norm {
                Some(op) => op,
                None => *op_norm.insert(operator_norm(z_after.values(), &train_after)?),
            };
            dd_bound = dd_bound + bound_from_step(z_after.values(), &train_after, &step, op, gamma2);
        }
        weights.push(w.iter().zip(&step).map(|(&a, &b)| a + b).collect());
    }

    let config = z_before.config();
    let kind = request.kind();
    let degree = request.target_degree(before.graph());
    let closed_form = config.mode == PropagationMode::Sgc || kind == RemovalKind::NodeFeature;
    let worst = if closed_form {
        worst_case_bound(kind, &model.loss().constants(), model.lambda(), m_before, config.depth, degree)
            .ok()
            .map(|b| b * T::from_usize_lossy(model.classifiers().len()))
    } else {
        None
    };

    let report = UnlearnReport {
        request,
        target_degree: degree,
        training_before: m_before,
        training_after: m_after,
        delta_norm: delta_sq.sqrt(),
        newton_step_norm: step_sq.sqrt(),
        worst_case_bound: worst,
        data_dependent_bound: dd_bound,
        true_residual: None,
        budget_before: T::zero(),
        budget_after: T::zero(),
        retrained: false,
        update_time: Duration::ZERO,
        retrain_time: None,
    };
    Ok((model.with_weights(weights), report))
}

/// Single-writer state of a removal stream: dataset, model, cached propagation and
/// the budget accountant.
#[derive(Debug, Clone)]
pub struct UnlearningSession<T> {
    dataset: Dataset<T>,
    model: ModelState<T>,
    cache: PropagationCache<T>,
    accountant: BudgetAccountant<T>,
    train_config: TrainConfig<T>,
    stream_seed: u64,
    measure_true_residual: bool,
}

impl<T: Scalar> UnlearningSession<T> {
    /// Trains the initial model with noise drawn from `seed`.
    pub fn train(
        dataset: Dataset<T>,
        propagation: PropagationConfig,
        train_config: TrainConfig<T>,
        accountant: BudgetAccountant<T>,
        seed: u64,
    ) -> Result<Self> {
        let cache = PropagationCache::new(dataset.graph(), dataset.features(), propagation)?;
        let model = train(&dataset, cache.embedding(), &train_config, seed)?;
        Ok(Self {
            dataset,
            model,
            cache,
            accountant,
            train_config,
            stream_seed: seed,
            measure_true_residual: false,
        })
    }

    /// Resumes from an already trained model.
    pub fn from_model(
        dataset: Dataset<T>,
        model: ModelState<T>,
        propagation: PropagationConfig,
        train_config: TrainConfig<T>,
        accountant: BudgetAccountant<T>,
        stream_seed: u64,
    ) -> Result<Self> {
        let cache = PropagationCache::new(dataset.graph(), dataset.features(), propagation)?;
        check_embeddings(&model, &dataset, cache.embedding())?;
        Ok(Self {
            dataset,
            model,
            cache,
            accountant,
            train_config,
            stream_seed,
            measure_true_residual: false,
        })
    }

    /// Also evaluate `|grad L(w-, D')|` for every request (costs one gradient pass).
    pub fn measure_true_residual(mut self, on: bool) -> Self {
        self.measure_true_residual = on;
        self
    }

    pub fn dataset(&self) -> &Dataset<T> {
        &self.dataset
    }

    pub fn model(&self) -> &ModelState<T> {
        &self.model
    }

    pub fn embedding(&self) -> &EmbeddingMatrix<T> {
        self.cache.embedding()
    }

    pub fn accountant(&self) -> &BudgetAccountant<T> {
        &self.accountant
    }

    /// Applies one request: removal, incremental propagation, Newton update, budget
    /// bookkeeping and, if the budget is exhausted, a full retrain with fresh noise.
    ///
    /// On error the session is left unchanged.
    pub fn process(&mut self, request: RemovalRequest) -> Result<UnlearnReport<T>> {
        let start = Instant::now();
        let after = apply_removal(&self.dataset, request)?;
        let (feature_rows, structural_rows) = request.affected_rows(self.dataset.graph());
        let z_before = self.cache.embedding().clone();
        self.cache
            .update(after.graph(), after.features(), &feature_rows, &structural_rows)?;
        let outcome = unlearn(&self.model, &self.dataset, &after, &z_before, self.cache.embedding(), request);
        let (mut model, mut report) = match outcome {
            Ok(ok) => ok,
            Err(e) => {
                self.cache = PropagationCache::new(self.dataset.graph(), self.dataset.features(), self.cache.config())?;
                return Err(e);
            }
        };
        report.update_time = start.elapsed();
        if self.measure_true_residual {
            report.true_residual = Some(true_residual(&model, &after, self.cache.embedding())?);
        }

        let mut accountant = self.accountant;
        report.budget_before = accountant.accumulated();
        if accountant.accumulate(report.data_dependent_bound)? {
            let t = Instant::now();
            let seed = derive_seed(self.stream_seed, accountant.retrain_count() as u64 + 1);
            model = train(&after, self.cache.embedding(), &self.train_config, seed)?;
            accountant.record_retrain();
            report.retrained = true;
            report.retrain_time = Some(t.elapsed());
        }
        report.budget_after = accountant.accumulated();

        self.accountant = accountant;
        self.model = model;
        self.dataset = after;
        Ok(report)
    }
}

/// A stream that stopped at request `index`; `reports` holds every completed request.
#[derive(Debug, Clone)]
pub struct StreamError<T> {
    pub index: usize,
    pub reports: Vec<UnlearnReport<T>>,
    pub error: Error,
}

impl<T: std::fmt::Debug> std::fmt::Display for StreamError<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "removal stream aborted at request {}: {}", self.index, self.error)
    }
}

impl<T: std::fmt::Debug> std::error::Error for StreamError<T> {}

/// Processes `requests` in order.
pub fn run_stream<T: Scalar>(
    session: &mut UnlearningSession<T>,
    requests: &[RemovalRequest],
) -> Result<Vec<UnlearnReport<T>>, StreamError<T>> {
    let mut reports = Vec::with_capacity(requests.len());
    for (index, &req) in requests.iter().enumerate() {
        match session.process(req) {
            Ok(r) => reports.push(r),
            Err(error) => return Err(StreamError { index, reports, error }),
        }
    }
    Ok(reports)
}
