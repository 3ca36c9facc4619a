//! Ground truth for the unlearning update: exact retraining, residual measurement
//! and rank correlation.

use crate::dataset::Dataset;
use crate::dense::norm;
use crate::error::{Error, Result};
use crate::model::{train, train_with_noise, ModelState, SolverOptions, TrainConfig};
use crate::propagation::EmbeddingMatrix;
use crate::scalar::Scalar;

/// Gradient tolerance per training point used for oracle retrains.
pub const ORACLE_TOLERANCE: f64 = 1e-10;

fn oracle_config<T: Scalar>(model: &ModelState<T>) -> TrainConfig<T> {
    let tol = T::lit(ORACLE_TOLERANCE).max(SolverOptions::<T>::default_tolerance());
    let mut cfg = TrainConfig::new(model.lambda(), model.alpha(), model.loss());
    cfg.solver = cfg.solver.with_tolerance(tol);
    cfg
}

/// Retrains from scratch on `after`, keeping the model's noise vectors.
pub fn retrain_oracle<T: Scalar>(model: &ModelState<T>, after: &Dataset<T>, z_after: &EmbeddingMatrix<T>) -> Result<ModelState<T>> {
    let noise = model.classifiers().iter().map(|c| c.noise.clone()).collect();
    train_with_noise(after, z_after, &oracle_config(model), noise, model.seed())
}

/// Retrains from scratch on `after` with a fresh perturbation drawn from `seed`.
pub fn retrain_fresh_noise<T: Scalar>(
    model: &ModelState<T>,
    after: &Dataset<T>,
    z_after: &EmbeddingMatrix<T>,
    seed: u64,
) -> Result<ModelState<T>> {
    train(after, z_after, &oracle_config(model), seed)
}

/// Per-classifier gradient norms `|grad L(w, D')|` of `model` on `after`.
pub fn residuals<T: Scalar>(model: &ModelState<T>, after: &Dataset<T>, z_after: &EmbeddingMatrix<T>) -> Result<Vec<T>> {
    (0..model.classifiers().len())
        .map(|c| {
            let obj = model.objective(c, after, z_after)?;
            Ok(norm(&obj.gradient(&model.classifiers()[c].weights)))
        })
        .collect()
}

/// Sum of the per-classifier gradient norms.
pub fn true_residual<T: Scalar>(model: &ModelState<T>, after: &Dataset<T>, z_after: &EmbeddingMatrix<T>) -> Result<T> {
    Ok(residuals(model, after, z_after)?.into_iter().sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult<T> {
    pub retrained: ModelState<T>,
    pub true_residual: T,
    /// Frobenius distance between unlearned and retrained weights.
    pub weight_gap: T,
    /// Accuracy of the unlearned model minus accuracy of the retrained one.
    pub accuracy_gap: f64,
}

/// Compares an unlearned model against exact retraining with the same noise.
/// Accuracy is measured on `eval_nodes`; pass an empty slice to skip it.
pub fn compare_with_retraining<T: Scalar>(
    unlearned: &ModelState<T>,
    after: &Dataset<T>,
    z_after: &EmbeddingMatrix<T>,
    eval_nodes: &[usize],
) -> Result<OracleResult<T>> {
    let retrained = retrain_oracle(unlearned, after, z_after)?;
    let weight_gap = unlearned
        .classifiers()
        .iter()
        .zip(retrained.classifiers())
        .flat_map(|(a, b)| a.weights.iter().zip(&b.weights).map(|(&x, &y)| (x - y) * (x - y)))
        .sum::<T>()
        .sqrt();
    let accuracy_gap = if eval_nodes.is_empty() {
        0.0
    } else {
        unlearned.accuracy(z_after, after.labels(), eval_nodes)? - retrained.accuracy(z_after, after.labels(), eval_nodes)?
    };
    Ok(OracleResult {
        true_residual: true_residual(unlearned, after, z_after)?,
        retrained,
        weight_gap,
        accuracy_gap,
    })
}

/// Ranks starting at 1, ties share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with averaged ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} observations", x.len(), y.len())));
    }
    if x.len() < 2 || x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("need at least two finite observations".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidParameter("constant sample has no rank correlation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
