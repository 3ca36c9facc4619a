//! Certified removal of node features, edges and nodes from linear models trained on
//! propagated graph embeddings (SGC and GPR-style).
//!
//! The pipeline is:
//!
//! 1. build a [`GraphCsr`] and a [`Dataset`],
//! 2. propagate features into an [`EmbeddingMatrix`] with [`propagate`],
//! 3. fit a noise-perturbed, L2-regularised linear model with [`train`],
//! 4. remove data with [`UnlearningSession::process`] (or [`unlearn`] for a single
//!    step), which applies a one-step Newton correction and tracks the residual
//!    budget, retraining when it runs out.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64` / `*32`
//! aliases below fix the precision.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons reject NaN

pub mod certification;
pub mod dataset;
pub mod dense;
pub mod error;
pub mod graph;
pub mod lemmas;
pub mod model;
pub mod oracle;
pub mod propagation;
pub mod scalar;
pub mod synthetic;
pub mod unlearning;

pub use certification::{
    budget_from, data_dependent_bound, noise_multiplier, noise_sigma_for, operator_norm, worst_case_bound,
    BudgetAccountant, PrivacyParams, RemovalKind,
};
pub use dataset::{Dataset, Split};
pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use graph::GraphCsr;
pub use lemmas::{dense_lemma_suite, LemmaReport};
pub use model::{
    derive_seed, train, train_with_noise, BinaryClassifier, LossConstants, LossKind, ModelState, Objective,
    SolverMethod, SolverOptions, TrainConfig,
};
pub use oracle::{retrain_oracle, spearman, true_residual, OracleResult};
pub use propagation::{propagate, EmbeddingMatrix, PropagationCache, PropagationConfig, PropagationMode};
pub use scalar::Scalar;
pub use synthetic::{stochastic_block_model, SbmConfig};
pub use unlearning::{apply_removal, run_stream, unlearn, RemovalRequest, StreamError, UnlearnReport, UnlearningSession};

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type EmbeddingMatrix64 = EmbeddingMatrix<f64>;
pub type EmbeddingMatrix32 = EmbeddingMatrix<f32>;
pub type ModelState64 = ModelState<f64>;
pub type ModelState32 = ModelState<f32>;
pub type TrainConfig64 = TrainConfig<f64>;
pub type TrainConfig32 = TrainConfig<f32>;
pub type UnlearningSession64 = UnlearningSession<f64>;
pub type UnlearningSession32 = UnlearningSession<f32>;
pub type UnlearnReport64 = UnlearnReport<f64>;
pub type UnlearnReport32 = UnlearnReport<f32>;
