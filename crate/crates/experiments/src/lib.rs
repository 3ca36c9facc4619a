//! Configuration, dataset files and experiment orchestration for the
//! `graph-unlearn` command line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod io;
pub mod runner;

pub use config::{Baseline, ExperimentConfig};
pub use io::{load_dataset, save_dataset, DatasetFiles, Normalization};
pub use runner::{execute, guo_baseline, removal_plan, run_experiment, write_outputs, ExperimentOutcome};
