//! Removal streams against the unlearning pipeline and its retraining baselines.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Result};
use graph_unlearn::{
    apply_removal, budget_from, derive_seed, propagate, stochastic_block_model, train, BudgetAccountant, Dataset,
    EmbeddingMatrix, ModelState, PrivacyParams, PropagationConfig, PropagationMode, RemovalKind, RemovalRequest,
    Split, TrainConfig, UnlearningSession,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Baseline, ExperimentConfig};
use crate::io::{load_dataset, write_atomic, DatasetFiles, Normalization};

/// One line of `requests.csv`. Index 0 (`kind = "initial"`) describes the model
/// before any removal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestRow {
    pub trial: usize,
    pub method: &'static str,
    pub request_index: usize,
    pub kind: &'static str,
    pub target: String,
    pub target_degree: Option<usize>,
    pub training_count: usize,
    pub delta_norm: Option<f64>,
    pub worst_case_bound: Option<f64>,
    pub data_dependent_bound: Option<f64>,
    pub true_residual: Option<f64>,
    pub accumulated_budget: Option<f64>,
    pub retrained: bool,
    pub retrain_count: usize,
    pub test_accuracy: Option<f64>,
    pub error: String,
}

/// One line of `timings.csv`; wall-clock seconds around the update or retrain only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub trial: usize,
    pub method: &'static str,
    pub request_index: usize,
    pub step_seconds: f64,
    pub cumulative_seconds: f64,
}

/// One line of `summary.csv`: statistics across trials for one method and request index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: &'static str,
    pub request_index: usize,
    pub trials: usize,
    pub test_accuracy_mean: Option<f64>,
    pub test_accuracy_std: Option<f64>,
    pub data_dependent_bound_mean: Option<f64>,
    pub data_dependent_bound_std: Option<f64>,
    pub true_residual_mean: Option<f64>,
    pub true_residual_std: Option<f64>,
    pub retrain_count_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacyManifest {
    pub alpha: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// `None` when `alpha = 0` (no perturbation, no retrain budget).
    pub budget: Option<f64>,
    pub noise_parameterization: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetManifest {
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub classes: usize,
    pub training_nodes: usize,
    pub test_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub privacy: PrivacyManifest,
    pub dataset: DatasetManifest,
    pub removals_per_trial: usize,
    pub error: Option<String>,
    pub files: Vec<&'static str>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<RequestRow>,
    pub timings: Vec<TimingRow>,
    pub summary: Vec<SummaryRow>,
    pub manifest: Manifest,
    /// Set when a stream aborted; `rows` then ends with an error row.
    pub error: Option<String>,
}

impl ExperimentOutcome {
    /// Total wall time of `method`, summed over requests and averaged over trials.
    pub fn mean_cumulative_seconds(&self, method: Baseline) -> Option<f64> {
        let mut per_trial: BTreeMap<usize, f64> = BTreeMap::new();
        for t in self.timings.iter().filter(|t| t.method == method.as_str()) {
            let e = per_trial.entry(t.trial).or_default();
            *e = e.max(t.cumulative_seconds);
        }
        (!per_trial.is_empty()).then(|| per_trial.values().sum::<f64>() / per_trial.len() as f64)
    }

    /// Test accuracy of `method` after the last request, averaged over trials.
    pub fn mean_final_accuracy(&self, method: Baseline) -> Option<f64> {
        let mut last: BTreeMap<usize, &RequestRow> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.method == method.as_str() && r.error.is_empty()) {
            last.insert(r.trial, r);
        }
        let acc: Vec<f64> = last.values().filter_map(|r| r.test_accuracy).collect();
        (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64)
    }
}

pub fn load_or_generate(config: &ExperimentConfig) -> Result<Dataset<f64>> {
    if let Some(edges) = &config.edge_file {
        let files = DatasetFiles {
            edges: edges.clone(),
            features: config.feature_file.clone().ok_or_else(|| anyhow!("feature_file missing"))?,
            labels: config.label_file.clone().ok_or_else(|| anyhow!("label_file missing"))?,
            splits: config.split_file.clone().ok_or_else(|| anyhow!("split_file missing"))?,
        };
        let norm = if config.per_row_normalization {
            Normalization::PerRow
        } else {
            Normalization::Global
        };
        return load_dataset(&files, norm);
    }
    let seed = config.seed.ok_or_else(|| anyhow!("a seed is required"))?;
    Ok(stochastic_block_model(&config.sbm(), seed)?)
}

pub const DEFAULT_REMOVAL_FRACTION: f64 = 0.1;

/// Ordered removal requests for one trial: the explicit list when given, otherwise a
/// seeded random order over training nodes (node kinds) or edges.
pub fn removal_plan(ds: &Dataset<f64>, config: &ExperimentConfig, seed: u64) -> Result<Vec<RemovalRequest>> {
    let kind = config.removal_kind;
    if !config.removal_edges.is_empty() {
        return Ok(config.removal_edges.iter().map(|&[u, v]| RemovalRequest::Edge(u, v)).collect());
    }
    if !config.removal_nodes.is_empty() {
        return Ok(config.removal_nodes.iter().map(|&i| node_request(kind, i)).collect());
    }
    let mut eligible: Vec<RemovalRequest> = match kind {
        RemovalKind::Edge => ds.graph().edges().map(|(u, v)| RemovalRequest::Edge(u, v)).collect(),
        _ => ds.training_nodes().into_iter().map(|i| node_request(kind, i)).collect(),
    };
    let count = match (config.removal_count, config.removal_fraction) {
        (Some(c), _) => c,
        (None, Some(f)) => (f * eligible.len() as f64).round() as usize,
        (None, None) => (DEFAULT_REMOVAL_FRACTION * eligible.len() as f64).round() as usize,
    };
    if count > eligible.len() {
        bail!("{count} removals requested but only {} eligible targets", eligible.len());
    }
    eligible.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    eligible.truncate(count);
    Ok(eligible)
}

fn node_request(kind: RemovalKind, i: usize) -> RemovalRequest {
    match kind {
        RemovalKind::NodeFeature => RemovalRequest::NodeFeature(i),
        _ => RemovalRequest::Node(i),
    }
}

fn target_label(req: RemovalRequest) -> String {
    match req {
        RemovalRequest::NodeFeature(i) | RemovalRequest::Node(i) => i.to_string(),
        RemovalRequest::Edge(u, v) => format!("{u}-{v}"),
    }
}

fn test_accuracy(model: &ModelState<f64>, ds: &Dataset<f64>, z: &EmbeddingMatrix<f64>) -> Option<f64> {
    let nodes = ds.nodes_in(Split::Test);
    model.accuracy(z, ds.labels(), &nodes).ok()
}

struct Recorder<'a> {
    trial: usize,
    method: &'static str,
    rows: &'a mut Vec<RequestRow>,
    timings: &'a mut Vec<TimingRow>,
    elapsed: Duration,
}

impl Recorder<'_> {
    fn blank(&self, index: usize, kind: &'static str, training_count: usize) -> RequestRow {
        RequestRow {
            trial: self.trial,
            method: self.method,
            request_index: index,
            kind,
            target: String::new(),
            target_degree: None,
            training_count,
            delta_norm: None,
            worst_case_bound: None,
            data_dependent_bound: None,
            true_residual: None,
            accumulated_budget: None,
            retrained: false,
            retrain_count: 0,
            test_accuracy: None,
            error: String::new(),
        }
    }

    fn push(&mut self, row: RequestRow, step: Duration) {
        self.elapsed += step;
        self.timings.push(TimingRow {
            trial: self.trial,
            method: self.method,
            request_index: row.request_index,
            step_seconds: step.as_secs_f64(),
            cumulative_seconds: self.elapsed.as_secs_f64(),
        });
        self.rows.push(row);
    }

    fn fail(&mut self, index: usize, req: Option<RemovalRequest>, error: &dyn std::fmt::Display) -> String {
        let mut row = self.blank(index, "error", 0);
        if let Some(r) = req {
            row.target = target_label(r);
        }
        row.error = error.to_string();
        self.rows.push(row);
        format!("trial {} method {} request {index}: {error}", self.trial, self.method)
    }
}

fn train_config(config: &ExperimentConfig) -> TrainConfig<f64> {
    TrainConfig::new(config.lambda, config.alpha, config.loss)
}

fn accountant(config: &ExperimentConfig) -> Result<(BudgetAccountant<f64>, Option<f64>)> {
    if config.alpha == 0.0 {
        return Ok((BudgetAccountant::unlimited(), None));
    }
    let budget = budget_from(&PrivacyParams {
        epsilon: config.epsilon,
        delta: config.delta,
        alpha: config.alpha,
    })?;
    Ok((BudgetAccountant::new(budget)?, Some(budget)))
}

fn propagation_for(method: Baseline, config: &ExperimentConfig) -> PropagationConfig {
    if method.uses_graph() {
        config.propagation()
    } else {
        PropagationConfig {
            depth: 0,
            mode: PropagationMode::Sgc,
        }
    }
}

fn run_unlearning(
    ds: &Dataset<f64>,
    plan: &[RemovalRequest],
    config: &ExperimentConfig,
    propagation: PropagationConfig,
    seed: u64,
    rec: &mut Recorder<'_>,
) -> Result<(), String> {
    let (acct, _) = accountant(config).map_err(|e| rec.fail(0, None, &e))?;
    let t = Instant::now();
    let session = UnlearningSession::train(ds.clone(), propagation, train_config(config), acct, seed);
    let initial_time = t.elapsed();
    let mut session = session.map_err(|e| rec.fail(0, None, &e))?.measure_true_residual(config.oracle);
    let mut row = rec.blank(0, "initial", ds.training_count());
    row.test_accuracy = test_accuracy(session.model(), session.dataset(), session.embedding());
    row.accumulated_budget = Some(0.0);
    rec.push(row, initial_time);

    for (k, &req) in plan.iter().enumerate() {
        let report = session.process(req).map_err(|e| rec.fail(k + 1, Some(req), &e))?;
        let mut row = rec.blank(k + 1, req.kind().as_str(), report.training_after);
        row.target = target_label(req);
        row.target_degree = Some(report.target_degree);
        row.delta_norm = Some(report.delta_norm);
        row.worst_case_bound = report.worst_case_bound;
        row.data_dependent_bound = Some(report.data_dependent_bound);
        row.true_residual = report.true_residual;
        row.accumulated_budget = Some(report.budget_after);
        row.retrained = report.retrained;
        row.retrain_count = session.accountant().retrain_count();
        row.test_accuracy = test_accuracy(session.model(), session.dataset(), session.embedding());
        rec.push(row, report.update_time + report.retrain_time.unwrap_or_default());
    }
    Ok(())
}

fn run_retraining(
    ds: &Dataset<f64>,
    plan: &[RemovalRequest],
    config: &ExperimentConfig,
    propagation: PropagationConfig,
    seed: u64,
    rec: &mut Recorder<'_>,
) -> Result<(), String> {
    let cfg = train_config(config);
    let t = Instant::now();
    let fitted = propagate(ds.graph(), ds.features(), propagation)
        .and_then(|z| train(ds, &z, &cfg, seed).map(|m| (z, m)));
    let initial_time = t.elapsed();
    let (z, model) = fitted.map_err(|e| rec.fail(0, None, &e))?;
    let mut row = rec.blank(0, "initial", ds.training_count());
    row.test_accuracy = test_accuracy(&model, ds, &z);
    rec.push(row, initial_time);

    let mut cur = ds.clone();
    for (k, &req) in plan.iter().enumerate() {
        let degree = req.target_degree(cur.graph());
        let next = apply_removal(&cur, req).map_err(|e| rec.fail(k + 1, Some(req), &e))?;
        let t = Instant::now();
        let fitted = propagate(next.graph(), next.features(), propagation)
            .and_then(|z| train(&next, &z, &cfg, derive_seed(seed, k as u64 + 1)).map(|m| (z, m)));
        let step = t.elapsed();
        let (z, model) = fitted.map_err(|e| rec.fail(k + 1, Some(req), &e))?;
        let mut row = rec.blank(k + 1, req.kind().as_str(), next.training_count());
        row.target = target_label(req);
        row.target_degree = Some(degree);
        row.retrained = true;
        row.retrain_count = k + 1;
        row.test_accuracy = test_accuracy(&model, &next, &z);
        rec.push(row, step);
        cur = next;
    }
    Ok(())
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (Some(mean), Some(var.sqrt()))
}

fn summarise(rows: &[RequestRow], order: &[Baseline]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for method in order.iter().map(|b| b.as_str()) {
        let mut groups: BTreeMap<usize, Vec<&RequestRow>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.method == method && r.error.is_empty()) {
            groups.entry(r.request_index).or_default().push(r);
        }
        for (index, group) in groups {
            let pick = |f: fn(&RequestRow) -> Option<f64>| group.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
            let (acc_m, acc_s) = mean_std(&pick(|r| r.test_accuracy));
            let (dd_m, dd_s) = mean_std(&pick(|r| r.data_dependent_bound));
            let (tr_m, tr_s) = mean_std(&pick(|r| r.true_residual));
            out.push(SummaryRow {
                method,
                request_index: index,
                trials: group.len(),
                test_accuracy_mean: acc_m,
                test_accuracy_std: acc_s,
                data_dependent_bound_mean: dd_m,
                data_dependent_bound_std: dd_s,
                true_residual_mean: tr_m,
                true_residual_std: tr_s,
                retrain_count_mean: group.iter().map(|r| r.retrain_count as f64).sum::<f64>() / group.len() as f64,
            });
        }
    }
    out
}

/// Runs every configured trial and baseline. A failing stream stops the run; the
/// outcome then carries the rows produced so far, an error row and `error`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let seed = config.seed.expect("validated");
    let ds = load_or_generate(config)?;
    let (_, budget) = accountant(config)?;

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut error = None;
    let mut removals = 0;
    'trials: for trial in 0..config.trials {
        let trial_seed = derive_seed(seed, trial as u64);
        let plan = removal_plan(&ds, config, trial_seed)?;
        removals = plan.len();
        for &method in &config.baselines {
            let mut rec = Recorder {
                trial,
                method: method.as_str(),
                rows: &mut rows,
                timings: &mut timings,
                elapsed: Duration::ZERO,
            };
            let propagation = propagation_for(method, config);
            let result = if method.is_unlearning() {
                run_unlearning(&ds, &plan, config, propagation, trial_seed, &mut rec)
            } else {
                run_retraining(&ds, &plan, config, propagation, trial_seed, &mut rec)
            };
            if let Err(e) = result {
                error = Some(e);
                break 'trials;
            }
        }
    }

    let summary = summarise(&rows, &config.baselines);
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config: config.clone(),
        privacy: PrivacyManifest {
            alpha: config.alpha,
            epsilon: config.epsilon,
            delta: config.delta,
            budget,
            noise_parameterization: "alpha is the per-coordinate standard deviation of b ~ N(0, alpha^2 I)",
        },
        dataset: DatasetManifest {
            nodes: ds.node_count(),
            edges: ds.graph().edge_count(),
            features: ds.feature_width(),
            classes: ds.num_classes(),
            training_nodes: ds.training_count(),
            test_nodes: ds.nodes_in(Split::Test).len(),
        },
        removals_per_trial: removals,
        error: error.clone(),
        files: vec!["requests.csv", "summary.csv", "timings.csv", "manifest.json"],
    };
    Ok(ExperimentOutcome {
        rows,
        timings,
        summary,
        manifest,
        error,
    })
}

fn to_csv<S: Serialize>(records: &[S]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| anyhow!("flushing CSV: {e}"))
}

/// Writes `requests.csv`, `summary.csv`, `timings.csv` and `manifest.json` into `dir`.
/// Everything except `timings.csv` is a deterministic function of the configuration.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    let requests = if outcome.rows.is_empty() {
        // keep the header even when nothing ran
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REQUEST_HEADER)?;
        w.into_inner().map_err(|e| anyhow!("flushing CSV: {e}"))?
    } else {
        to_csv(&outcome.rows)?
    };
    write_atomic(&dir.join("requests.csv"), &requests)?;
    write_atomic(&dir.join("summary.csv"), &to_csv(&outcome.summary)?)?;
    write_atomic(&dir.join("timings.csv"), &to_csv(&outcome.timings)?)?;
    let mut manifest = serde_json::to_vec_pretty(&outcome.manifest)?;
    manifest.push(b'\n');
    write_atomic(&dir.join("manifest.json"), &manifest)
}

const REQUEST_HEADER: [&str; 16] = [
    "trial",
    "method",
    "request_index",
    "kind",
    "target",
    "target_degree",
    "training_count",
    "delta_norm",
    "worst_case_bound",
    "data_dependent_bound",
    "true_residual",
    "accumulated_budget",
    "retrained",
    "retrain_count",
    "test_accuracy",
    "error",
];

/// Runs the experiment and writes its outputs to `config.output`, including partial
/// results when a stream fails.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let outcome = run_experiment(config)?;
    write_outputs(&outcome, &config.output)?;
    if let Some(e) = &outcome.error {
        bail!("{e} (partial results written to {})", config.output.display());
    }
    Ok(outcome)
}

/// The no-graph unlearning baseline: the same pipeline with propagation disabled.
pub fn guo_baseline(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let cfg = ExperimentConfig {
        depth: 0,
        mode: PropagationMode::Sgc,
        ..config.clone()
    };
    run_experiment(&cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            nodes: 80,
            p_in: 0.08,
            p_out: 0.01,
            removal_count: Some(4),
            seed: Some(5),
            baselines: vec![
                Baseline::Unlearn,
                Baseline::RetrainGraph,
                Baseline::RetrainNoGraph,
                Baseline::GuoNoGraphUnlearn,
            ],
            trials: 2,
            ..Default::default()
        }
    }

    #[test]
    fn rows_per_method_and_trial() {
        let out = run_experiment(&small()).unwrap();
        assert!(out.error.is_none());
        assert_eq!(out.rows.len(), 2 * 4 * 5);
        assert_eq!(out.timings.len(), out.rows.len());
        assert_eq!(out.summary.len(), 4 * 5);
        for r in out.rows.iter().filter(|r| r.method.starts_with("retrain")) {
            assert_eq!(r.retrained, r.request_index > 0);
        }
    }

    #[test]
    fn zero_removals_give_initial_rows_only() {
        let cfg = ExperimentConfig {
            removal_count: Some(0),
            ..small()
        };
        let out = run_experiment(&cfg).unwrap();
        assert!(out.rows.iter().all(|r| r.kind == "initial" && r.request_index == 0));
        assert_eq!(out.rows.len(), 2 * 4);
    }

    #[test]
    fn plan_respects_fraction_and_kind() {
        let cfg = ExperimentConfig {
            removal_fraction: Some(0.2),
            removal_count: None,
            ..small()
        };
        let ds = load_or_generate(&cfg).unwrap();
        let plan = removal_plan(&ds, &cfg, 1).unwrap();
        let m = ds.training_count();
        assert_eq!(plan.len(), (0.2 * m as f64).round() as usize);
        assert!(plan.iter().all(|r| matches!(r, RemovalRequest::Node(i) if ds.is_training(*i))));
        let edges = ExperimentConfig {
            removal_kind: RemovalKind::Edge,
            ..cfg
        };
        let plan = removal_plan(&ds, &edges, 1).unwrap();
        assert_eq!(plan.len(), (0.2 * ds.graph().edge_count() as f64).round() as usize);
    }

    #[test]
    fn failing_stream_keeps_partial_rows() {
        let cfg = ExperimentConfig {
            removal_nodes: vec![0, 0],
            removal_count: None,
            baselines: vec![Baseline::Unlearn],
            trials: 1,
            ..small()
        };
        let out = run_experiment(&cfg).unwrap();
        assert!(out.error.is_some());
        let last = out.rows.last().unwrap();
        assert_eq!(last.kind, "error");
        assert_eq!(last.request_index, 2);
        assert_eq!(out.rows.len(), 3);
    }

    #[test]
    fn guo_baseline_equals_depth_zero_run() {
        let cfg = ExperimentConfig {
            baselines: vec![Baseline::Unlearn],
            ..small()
        };
        let a = guo_baseline(&cfg).unwrap();
        let b = run_experiment(&ExperimentConfig { depth: 0, ..cfg }).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn mean_std_sample() {
        assert_eq!(mean_std(&[]), (None, None));
        assert_eq!(mean_std(&[2.0]), (Some(2.0), Some(0.0)));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert!((s.unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }
}
