//! Seeded stochastic block model graphs with class-dependent Gaussian features.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::GraphCsr;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub nodes: usize,
    pub classes: usize,
    pub features: usize,
    /// Edge probability between two nodes of the same class.
    pub p_in: f64,
    /// Edge probability between nodes of different classes.
    pub p_out: f64,
    /// Power-law exponent of the degree propensities; `None` gives a plain SBM.
    pub degree_exponent: Option<f64>,
    /// Norm of the class mean vectors.
    pub signal: f64,
    /// Expected norm of the per-node Gaussian perturbation.
    pub noise: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            nodes: 500,
            classes: 2,
            features: 16,
            p_in: 0.02,
            p_out: 0.002,
            degree_exponent: None,
            signal: 1.0,
            noise: 1.0,
            train_fraction: 0.6,
            val_fraction: 0.2,
        }
    }
}

impl SbmConfig {
    fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.nodes < 2 || self.classes < 2 || self.features == 0 {
            return Err(Error::InvalidParameter(
                "need at least two nodes, two classes and one feature".into(),
            ));
        }
        if !prob(self.p_in) || !prob(self.p_out) {
            return Err(Error::InvalidParameter("edge probabilities must lie in [0, 1]".into()));
        }
        if let Some(g) = self.degree_exponent {
            if !(g > 1.0) {
                return Err(Error::InvalidParameter(format!("degree exponent must exceed 1, got {g}")));
            }
        }
        if !(self.signal >= 0.0 && self.noise >= 0.0) {
            return Err(Error::InvalidParameter("signal and noise must be non-negative".into()));
        }
        if !(self.train_fraction > 0.0 && self.val_fraction >= 0.0 && self.train_fraction + self.val_fraction <= 1.0) {
            return Err(Error::InvalidParameter("split fractions must be non-negative and sum to at most 1".into()));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Propensities `(rank)^(-1 / (exponent - 1))` in random order, scaled to mean one.
fn degree_propensities(rng: &mut ChaCha8Rng, n: usize, exponent: Option<f64>) -> Vec<f64> {
    let Some(g) = exponent else {
        return vec![1.0; n];
    };
    let mut theta: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-1.0 / (g - 1.0))).collect();
    theta.shuffle(rng);
    let mean = theta.iter().sum::<f64>() / n as f64;
    theta.iter_mut().for_each(|t| *t /= mean);
    theta
}

/// Generates a labelled graph dataset; identical `(config, seed)` pairs give identical output.
///
/// Labels are uniform over classes. Each node's features are its class mean plus
/// isotropic Gaussian noise, after which all rows share one global scale so that the
/// largest row norm is at most 1.
pub fn stochastic_block_model<T: Scalar>(config: &SbmConfig, seed: u64) -> Result<Dataset<T>> {
    config.validate()?;
    let n = config.nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..config.classes)).collect();
    let theta = degree_propensities(&mut rng, n, config.degree_exponent);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let base = if labels[u] == labels[v] { config.p_in } else { config.p_out };
            if rng.random::<f64>() < (base * theta[u] * theta[v]).min(1.0) {
                edges.push((u, v));
            }
        }
    }
    let graph = GraphCsr::from_edges(n, edges)?;

    let f = config.features;
    let means: Vec<Vec<f64>> = (0..config.classes)
        .map(|_| {
            let v: Vec<f64> = (0..f).map(|_| gaussian(&mut rng)).collect();
            let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| config.signal * x / nrm).collect()
        })
        .collect();
    let noise_scale = config.noise / (f as f64).sqrt();
    let mut data = Vec::with_capacity(n * f);
    for &c in &labels {
        for &mu in &means[c] {
            data.push(T::lit(mu + noise_scale * gaussian(&mut rng)));
        }
    }
    let mut features = DenseMatrix::from_vec(n, f, data)?;
    Dataset::cap_feature_norms(&mut features);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = ((config.train_fraction * n as f64).round() as usize).clamp(1, n);
    let n_val = ((config.val_fraction * n as f64).round() as usize).min(n - n_train);
    let mut split = vec![Split::Test; n];
    for (pos, &i) in order.iter().enumerate() {
        if pos < n_train {
            split[i] = Split::Train;
        } else if pos < n_train + n_val {
            split[i] = Split::Val;
        }
    }
    Dataset::new(graph, features, labels, config.classes, split)
}
