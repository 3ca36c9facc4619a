use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use graph_unlearn::{
    dense_lemma_suite, stochastic_block_model, worst_case_bound, LossKind, PropagationMode, RemovalKind,
};
use graph_unlearn_experiments::{execute, save_dataset, Baseline, DatasetFiles, ExperimentConfig};

#[derive(Parser)]
#[command(name = "graph-unlearn", version, about = "Certified graph unlearning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run removal streams and write requests.csv, summary.csv, timings.csv and manifest.json.
    Run(Box<RunArgs>),
    /// Check the propagation inequalities on random small graphs with dense matrices.
    LemmaSuite {
        #[arg(long, default_value_t = 12)]
        n_max: usize,
        #[arg(long, default_value_t = 4)]
        k_max: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Print worst-case residual bounds as CSV over a grid of depths and degrees.
    BoundTable {
        #[arg(long, value_parser = parse_kind, default_value = "node")]
        kind: RemovalKind,
        #[arg(long, value_parser = parse_loss, default_value = "logistic")]
        loss: LossKind,
        #[arg(long, default_value_t = 1e-2)]
        lambda: f64,
        /// Training set size before the removal.
        #[arg(long, default_value_t = 1000)]
        training: usize,
        #[arg(long, default_value_t = 4)]
        depth_max: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
        degrees: Vec<usize>,
    },
    /// Write a synthetic stochastic block model dataset in the plain-text format.
    GenSynthetic {
        #[arg(long, default_value_t = 500)]
        nodes: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        features: usize,
        #[arg(long, default_value_t = 0.02)]
        p_in: f64,
        #[arg(long, default_value_t = 0.002)]
        p_out: f64,
        #[arg(long)]
        degree_exponent: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        signal: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.6)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<RemovalKind, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_mode(s: &str) -> Result<PropagationMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_edge(s: &str) -> Result<[usize; 2], String> {
    let (u, v) = s.split_once('-').ok_or_else(|| format!("expected u-v, got '{s}'"))?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("'{t}': {e}"));
    Ok([p(u)?, p(v)?])
}

/// Command line overrides; each one replaces the matching config key.
#[derive(Args)]
struct RunArgs {
    /// Flat TOML config file; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    edge_file: Option<PathBuf>,
    #[arg(long)]
    feature_file: Option<PathBuf>,
    #[arg(long)]
    label_file: Option<PathBuf>,
    #[arg(long)]
    split_file: Option<PathBuf>,
    /// Directory holding edges.txt, features.csv, labels.txt and splits.txt.
    #[arg(long, conflicts_with_all = ["edge_file", "feature_file", "label_file", "split_file"])]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    per_row_normalization: bool,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    degree_exponent: Option<f64>,
    #[arg(long)]
    signal: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Propagation depth K.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<PropagationMode>,
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Noise standard deviation.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_kind)]
    removal_kind: Option<RemovalKind>,
    #[arg(long, conflicts_with = "removal_fraction")]
    removal_count: Option<usize>,
    #[arg(long)]
    removal_fraction: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    removal_nodes: Option<Vec<usize>>,
    /// Comma separated `u-v` pairs.
    #[arg(long, value_delimiter = ',', value_parser = parse_edge)]
    removal_edges: Option<Vec<[usize; 2]>>,
    #[arg(long, value_enum, value_delimiter = ',')]
    baselines: Option<Vec<Baseline>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    oracle: bool,
}

impl RunArgs {
    fn into_config(self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            output, nodes, classes, features, p_in, p_out, signal, noise, train_fraction, val_fraction, depth, mode,
            loss, lambda, epsilon, delta, alpha, removal_kind, removal_nodes, removal_edges, baselines, trials
        );
        if let Some(dir) = &self.data_dir {
            let f = DatasetFiles::in_dir(dir);
            c.edge_file = Some(f.edges);
            c.feature_file = Some(f.features);
            c.label_file = Some(f.labels);
            c.split_file = Some(f.splits);
        }
        for (slot, v) in [
            (&mut c.edge_file, self.edge_file),
            (&mut c.feature_file, self.feature_file),
            (&mut c.label_file, self.label_file),
            (&mut c.split_file, self.split_file),
        ] {
            if v.is_some() {
                *slot = v;
            }
        }
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        if self.degree_exponent.is_some() {
            c.degree_exponent = self.degree_exponent;
        }
        if self.removal_count.is_some() {
            c.removal_count = self.removal_count;
            c.removal_fraction = None;
        }
        if self.removal_fraction.is_some() {
            c.removal_fraction = self.removal_fraction;
            c.removal_count = None;
        }
        if !c.removal_nodes.is_empty() || !c.removal_edges.is_empty() {
            c.removal_count = None;
            c.removal_fraction = None;
        }
        c.per_row_normalization |= self.per_row_normalization;
        c.oracle |= self.oracle;
        c.validate().context("invalid configuration (pass --seed or set seed in the config)")?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let config = args.into_config()?;
            let outcome = execute(&config)?;
            eprintln!(
                "wrote {} request rows to {}",
                outcome.rows.len(),
                config.output.display()
            );
            Ok(true)
        }
        Command::LemmaSuite {
            n_max,
            k_max,
            trials,
            seed,
        } => {
            let report = dense_lemma_suite(n_max, k_max, trials, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.passed())
        }
        Command::BoundTable {
            kind,
            loss,
            lambda,
            training,
            depth_max,
            degrees,
        } => {
            let constants = loss.constants::<f64>();
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(["kind", "depth", "degree", "worst_case_bound"])?;
            for depth in 0..=depth_max {
                for &d in &degrees {
                    let b = worst_case_bound(kind, &constants, lambda, training, depth, d)?;
                    w.write_record([kind.as_str(), &depth.to_string(), &d.to_string(), &b.to_string()])?;
                }
            }
            w.flush()?;
            Ok(true)
        }
        Command::GenSynthetic {
            nodes,
            classes,
            features,
            p_in,
            p_out,
            degree_exponent,
            signal,
            noise,
            train_fraction,
            val_fraction,
            seed,
            output,
        } => {
            let cfg = graph_unlearn::SbmConfig {
                nodes,
                classes,
                features,
                p_in,
                p_out,
                degree_exponent,
                signal,
                noise,
                train_fraction,
                val_fraction,
            };
            let ds = stochastic_block_model::<f64>(&cfg, seed)?;
            save_dataset(&ds, &DatasetFiles::in_dir(&output))?;
            eprintln!(
                "wrote {} nodes, {} edges to {}",
                ds.node_count(),
                ds.graph().edge_count(),
                output.display()
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("lemma suite failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
