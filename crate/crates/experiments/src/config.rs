use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use graph_unlearn::{LossKind, PropagationConfig, PropagationMode, RemovalKind, SbmConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Graph-aware Newton unlearning with the budgeted retrain policy.
    Unlearn,
    /// Full retraining on the propagated embeddings after every request.
    RetrainGraph,
    /// Full retraining on raw features after every request.
    RetrainNoGraph,
    /// Newton unlearning on raw features (the pipeline with depth 0).
    GuoNoGraphUnlearn,
}

impl Baseline {
    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::Unlearn => "unlearn",
            Baseline::RetrainGraph => "retrain-graph",
            Baseline::RetrainNoGraph => "retrain-no-graph",
            Baseline::GuoNoGraphUnlearn => "guo-no-graph-unlearn",
        }
    }

    pub fn uses_graph(self) -> bool {
        matches!(self, Baseline::Unlearn | Baseline::RetrainGraph)
    }

    pub fn is_unlearning(self) -> bool {
        matches!(self, Baseline::Unlearn | Baseline::GuoNoGraphUnlearn)
    }
}

/// Everything a run needs. Stored as a flat key-value TOML file; every key can be
/// overridden on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Whitespace separated `u v` lines. When set, `feature_file`, `label_file` and
    /// `split_file` are required and the synthetic generator is not used.
    pub edge_file: Option<PathBuf>,
    pub feature_file: Option<PathBuf>,
    pub label_file: Option<PathBuf>,
    pub split_file: Option<PathBuf>,
    /// Cap each feature row separately instead of one global rescale.
    pub per_row_normalization: bool,

    pub nodes: usize,
    pub classes: usize,
    pub features: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub degree_exponent: Option<f64>,
    pub signal: f64,
    pub noise: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,

    pub depth: usize,
    pub mode: PropagationMode,
    pub loss: LossKind,
    pub lambda: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Noise standard deviation; 0 disables the perturbation and the retrain budget.
    pub alpha: f64,

    pub removal_kind: RemovalKind,
    pub removal_count: Option<usize>,
    /// Fraction of the eligible targets (training nodes, or edges) to remove. When
    /// neither this nor `removal_count` is set, 10% of the targets are removed.
    pub removal_fraction: Option<f64>,
    /// Explicit node targets, used in order instead of a random plan.
    pub removal_nodes: Vec<usize>,
    /// Explicit edge targets, used in order instead of a random plan.
    pub removal_edges: Vec<[usize; 2]>,

    pub baselines: Vec<Baseline>,
    pub trials: usize,
    pub seed: Option<u64>,
    /// Evaluate the exact gradient residual after every unlearning step.
    pub oracle: bool,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sbm = SbmConfig::default();
        Self {
            edge_file: None,
            feature_file: None,
            label_file: None,
            split_file: None,
            per_row_normalization: false,
            nodes: sbm.nodes,
            classes: sbm.classes,
            features: sbm.features,
            p_in: sbm.p_in,
            p_out: sbm.p_out,
            degree_exponent: sbm.degree_exponent,
            signal: sbm.signal,
            noise: sbm.noise,
            train_fraction: sbm.train_fraction,
            val_fraction: sbm.val_fraction,
            depth: 2,
            mode: PropagationMode::Sgc,
            loss: LossKind::Logistic,
            lambda: 1e-2,
            epsilon: 1.0,
            delta: 1e-4,
            alpha: 0.1,
            removal_kind: RemovalKind::Node,
            removal_count: None,
            removal_fraction: None,
            removal_nodes: Vec::new(),
            removal_edges: Vec::new(),
            baselines: vec![Baseline::Unlearn, Baseline::RetrainGraph],
            trials: 1,
            seed: None,
            oracle: false,
            output: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            depth: self.depth,
            mode: self.mode,
        }
    }

    pub fn sbm(&self) -> SbmConfig {
        SbmConfig {
            nodes: self.nodes,
            classes: self.classes,
            features: self.features,
            p_in: self.p_in,
            p_out: self.p_out,
            degree_exponent: self.degree_exponent,
            signal: self.signal,
            noise: self.noise,
            train_fraction: self.train_fraction,
            val_fraction: self.val_fraction,
        }
    }

    pub fn uses_files(&self) -> bool {
        self.edge_file.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            bail!("a seed is required");
        }
        if self.uses_files() {
            for (name, p) in [
                ("feature_file", &self.feature_file),
                ("label_file", &self.label_file),
                ("split_file", &self.split_file),
            ] {
                match p {
                    None => bail!("{name} is required when edge_file is set"),
                    Some(p) if !p.exists() => bail!("{name} {} does not exist", p.display()),
                    _ => {}
                }
            }
            let edges = self.edge_file.as_ref().expect("checked");
            if !edges.exists() {
                bail!("edge_file {} does not exist", edges.display());
            }
        }
        if !(self.lambda > 0.0) {
            bail!("lambda must be positive");
        }
        if !(self.alpha >= 0.0) {
            bail!("alpha must be non-negative");
        }
        if !(self.epsilon > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            bail!("epsilon must be positive and delta must lie in (0, 1)");
        }
        if let Some(f) = self.removal_fraction {
            if !(f > 0.0 && f <= 1.0) {
                bail!("removal_fraction must lie in (0, 1], got {f}");
            }
        }
        if self.removal_count.is_some() && self.removal_fraction.is_some() {
            bail!("set at most one of removal_count and removal_fraction");
        }
        if !self.removal_edges.is_empty() && self.removal_kind != RemovalKind::Edge {
            bail!("removal_edges requires removal_kind = \"edge\"");
        }
        if !self.removal_nodes.is_empty() && self.removal_kind == RemovalKind::Edge {
            bail!("removal_nodes requires a node or node-feature removal_kind");
        }
        if self.trials == 0 {
            bail!("trials must be positive");
        }
        if self.baselines.is_empty() {
            bail!("no baselines selected");
        }
        let mut seen = self.baselines.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.baselines.len() {
            bail!("duplicate baseline");
        }
        Ok(())
    }
}
