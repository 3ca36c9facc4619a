//! Regularised convex training on node embeddings with Gaussian objective perturbation.
//!
//! For one binary classifier the objective is
//!
//! ```text
//! L_b(w) = sum_{i in train} [ loss(z_i . w, y_i) + (lambda / 2) |w|^2 ] + b . w
//! ```
//!
//! so the regulariser has total strength `lambda * m` and `L_b` is `lambda * m`
//! strongly convex. The noise vector `b` is drawn once at training time and stored
//! with the model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dense::{axpy, dot, hessian_solve, norm, DenseMatrix};
use crate::error::{Error, Result};
use crate::propagation::EmbeddingMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `-log sigma(y s)` with labels in `{-1, +1}`.
    Logistic,
    /// `(s - y)^2` with real targets.
    LeastSquares,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(LossKind::Logistic),
            "least-squares" => Ok(LossKind::LeastSquares),
            other => Err(Error::InvalidParameter(format!("unknown loss '{other}'"))),
        }
    }
}

/// Constants of the loss regularity assumptions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConstants<T> {
    /// bound on the per-point gradient norm
    pub c: T,
    /// bound on `|loss'|`
    pub c1: T,
    /// Lipschitz constant of `loss'`
    pub gamma1: T,
    /// Lipschitz constant of `loss''`
    pub gamma2: T,
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl LossKind {
    /// Least squares has an unbounded gradient, so `c` and `c1` are infinite; its
    /// curvature is constant, hence `gamma2 = 0` and all residual bounds vanish.
    pub fn constants<T: Scalar>(self) -> LossConstants<T> {
        match self {
            LossKind::Logistic => LossConstants {
                c: T::one(),
                c1: T::one(),
                gamma1: T::lit(0.25),
                gamma2: T::lit(0.25),
            },
            LossKind::LeastSquares => LossConstants {
                c: T::infinity(),
                c1: T::infinity(),
                gamma1: T::lit(2.0),
                gamma2: T::zero(),
            },
        }
    }

    #[inline]
    pub fn value<T: Scalar>(self, s: T, y: T) -> T {
        match self {
            LossKind::Logistic => {
                // softplus(-y s), stable in both tails
                let t = -y * s;
                if t > T::zero() {
                    t + (-t).exp().ln_1p()
                } else {
                    t.exp().ln_1p()
                }
            }
            LossKind::LeastSquares => (s - y) * (s - y),
        }
    }

    /// Derivative with respect to the score `s`.
    #[inline]
    pub fn first<T: Scalar>(self, s: T, y: T) -> T {
        match self {
            LossKind::Logistic => y * (sigmoid(y * s) - T::one()),
            LossKind::LeastSquares => T::lit(2.0) * (s - y),
        }
    }

    #[inline]
    pub fn second<T: Scalar>(self, s: T, y: T) -> T {
        match self {
            LossKind::Logistic => {
                let p = sigmoid(y * s);
                y * y * p * (T::one() - p)
            }
            LossKind::LeastSquares => T::lit(2.0),
        }
    }
}

/// The perturbed training objective of one binary classifier.
#[derive(Debug, Clone)]
pub struct Objective<'a, T> {
    z: &'a DenseMatrix<T>,
    targets: Vec<T>,
    train: Vec<usize>,
    lambda: T,
    loss: LossKind,
    noise: &'a [T],
}

impl<'a, T: Scalar> Objective<'a, T> {
    /// `targets` is indexed by node; only entries with `mask[i]` are read.
    pub fn new(
        z: &'a DenseMatrix<T>,
        targets: Vec<T>,
        mask: &[bool],
        lambda: T,
        loss: LossKind,
        noise: &'a [T],
    ) -> Result<Self> {
        if mask.len() != z.rows() || targets.len() != z.rows() {
            return Err(Error::DimensionMismatch(format!(
                "embedding has {} rows, mask {} and targets {}",
                z.rows(),
                mask.len(),
                targets.len()
            )));
        }
        let train = (0..mask.len()).filter(|&i| mask[i]).collect();
        Self::from_rows(z, targets, train, lambda, loss, noise)
    }

    pub fn from_rows(
        z: &'a DenseMatrix<T>,
        targets: Vec<T>,
        train: Vec<usize>,
        lambda: T,
        loss: LossKind,
        noise: &'a [T],
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if noise.len() != z.cols() {
            return Err(Error::DimensionMismatch(format!(
                "noise has length {}, embedding width is {}",
                noise.len(),
                z.cols()
            )));
        }
        if !(lambda > T::zero()) {
            return Err(Error::InvalidParameter("lambda must be positive".into()));
        }
        if let Some(&i) = train.iter().find(|&&i| !targets[i].is_finite()) {
            return Err(Error::InvalidParameter(format!("target of node {i} is not finite")));
        }
        Ok(Self {
            z,
            targets,
            train,
            lambda,
            loss,
            noise,
        })
    }

    pub fn dim(&self) -> usize {
        self.z.cols()
    }

    pub fn training_count(&self) -> usize {
        self.train.len()
    }

    pub fn training_rows(&self) -> &[usize] {
        &self.train
    }

    pub fn embeddings(&self) -> &DenseMatrix<T> {
        self.z
    }

    /// Total regularisation strength `lambda * m`.
    pub fn strong_convexity(&self) -> T {
        self.lambda * T::from_usize_lossy(self.train.len())
    }

    fn check(&self, w: &[T]) {
        assert_eq!(w.len(), self.dim(), "weight vector length");
    }

    pub fn value(&self, w: &[T]) -> T {
        self.check(w);
        let half = T::lit(0.5);
        let reg = half * self.strong_convexity() * dot(w, w);
        let data: T = self
            .train
            .iter()
            .map(|&i| self.loss.value(dot(self.z.row(i), w), self.targets[i]))
            .sum();
        data + reg + dot(self.noise, w)
    }

    pub fn gradient(&self, w: &[T]) -> Vec<T> {
        self.check(w);
        let lm = self.strong_convexity();
        let mut g: Vec<T> = w.iter().zip(self.noise).map(|(&wi, &bi)| lm * wi + bi).collect();
        for &i in &self.train {
            let zi = self.z.row(i);
            let d = self.loss.first(dot(zi, w), self.targets[i]);
            axpy(d, zi, &mut g);
        }
        g
    }

    pub fn hessian(&self, w: &[T]) -> DenseMatrix<T> {
        self.check(w);
        let d = self.dim();
        let mut h = DenseMatrix::zeros(d, d);
        for &i in &self.train {
            let zi = self.z.row(i);
            let c = self.loss.second(dot(zi, w), self.targets[i]);
            if c == T::zero() {
                continue;
            }
            for a in 0..d {
                let ca = c * zi[a];
                if ca == T::zero() {
                    continue;
                }
                let row = h.row_mut(a);
                for b in a..d {
                    row[b] = row[b] + ca * zi[b];
                }
            }
        }
        let lm = self.strong_convexity();
        for a in 0..d {
            h[(a, a)] = h[(a, a)] + lm;
        }
        h.mirror_upper();
        h
    }

    pub fn hessian_vec(&self, w: &[T], v: &[T]) -> Vec<T> {
        self.check(w);
        let lm = self.strong_convexity();
        let mut out: Vec<T> = v.iter().map(|&x| lm * x).collect();
        for &i in &self.train {
            let zi = self.z.row(i);
            let c = self.loss.second(dot(zi, w), self.targets[i]) * dot(zi, v);
            axpy(c, zi, &mut out);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    /// Damped Newton with a Cholesky solve per iteration.
    Newton,
    /// Limited-memory BFGS with backtracking line search.
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    pub method: SolverMethod,
    /// Convergence threshold on the gradient norm, per training point.
    pub tolerance: T,
    pub max_iterations: usize,
    pub lbfgs_memory: usize,
}

impl<T: Scalar> SolverOptions<T> {
    /// `1e-8` per training point, loosened to `1e3 * eps` for low-precision scalars.
    pub fn default_tolerance() -> T {
        T::lit(1e-8).max(T::epsilon() * T::lit(1e3))
    }

    pub fn with_tolerance(mut self, tolerance: T) -> Self {
        self.tolerance = tolerance;
        self
    }
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            method: SolverMethod::Newton,
            tolerance: Self::default_tolerance(),
            max_iterations: 500,
            lbfgs_memory: 10,
        }
    }
}

/// Minimises a strongly convex objective from `start`.
///
/// Fails with [`Error::NotConverged`] instead of returning a partial solution.
pub fn minimize<T: Scalar>(obj: &Objective<'_, T>, start: Vec<T>, opts: &SolverOptions<T>) -> Result<Vec<T>> {
    let tol = opts.tolerance * T::from_usize_lossy(obj.training_count());
    match opts.method {
        SolverMethod::Newton => newton(obj, start, tol, opts.max_iterations),
        SolverMethod::Lbfgs => lbfgs(obj, start, tol, opts.max_iterations, opts.lbfgs_memory.max(1)),
    }
}

fn not_converged<T: Scalar>(iterations: usize, g: &[T], tol: T) -> Error {
    Error::NotConverged {
        iterations,
        gradient_norm: norm(g).to_f64_lossy(),
        tolerance: tol.to_f64_lossy(),
    }
}

/// Armijo test with slack for roundoff once the objective stops changing visibly.
fn sufficient_decrease<T: Scalar>(f_new: T, f0: T, t: T, slope: T) -> bool {
    let slack = T::lit(16.0) * T::epsilon() * f0.abs().max(T::one());
    f_new <= f0 + T::lit(1e-4) * t * slope + slack
}

fn newton<T: Scalar>(obj: &Objective<'_, T>, mut w: Vec<T>, tol: T, max_iter: usize) -> Result<Vec<T>> {
    let mut g = obj.gradient(&w);
    for iter in 0..max_iter {
        if norm(&g) <= tol {
            return Ok(polish(obj, w, g));
        }
        let step = hessian_solve(&obj.hessian(&w), &g)?;
        let f0 = obj.value(&w);
        let slope = -dot(&g, &step);
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = w.clone();
            axpy(-t, &step, &mut cand);
            if sufficient_decrease(obj.value(&cand), f0, t, slope) {
                accepted = Some(cand);
                break;
            }
            t = t * T::lit(0.5);
        }
        match accepted {
            Some(cand) => {
                w = cand;
                g = obj.gradient(&w);
            }
            None => return Err(not_converged(iter + 1, &g, tol)),
        }
    }
    if norm(&g) <= tol {
        Ok(polish(obj, w, g))
    } else {
        Err(not_converged(max_iter, &g, tol))
    }
}

/// Extra full Newton steps past the tolerance, kept only while the gradient shrinks.
/// Residual measurements downstream are only as good as first-order optimality here.
fn polish<T: Scalar>(obj: &Objective<'_, T>, mut w: Vec<T>, mut g: Vec<T>) -> Vec<T> {
    for _ in 0..3 {
        let Ok(step) = hessian_solve(&obj.hessian(&w), &g) else {
            break;
        };
        let mut cand = w.clone();
        axpy(-T::one(), &step, &mut cand);
        let g_new = obj.gradient(&cand);
        if norm(&g_new) < norm(&g) {
            w = cand;
            g = g_new;
        } else {
            break;
        }
    }
    w
}

fn lbfgs<T: Scalar>(obj: &Objective<'_, T>, mut w: Vec<T>, tol: T, max_iter: usize, memory: usize) -> Result<Vec<T>> {
    use std::collections::VecDeque;
    let mut g = obj.gradient(&w);
    let mut f = obj.value(&w);
    let mut hist: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(memory);
    for iter in 0..max_iter {
        if norm(&g) <= tol {
            return Ok(w);
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = *rho * dot(s, &q);
            axpy(-a, y, &mut q);
            alphas.push(a);
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => T::one() / obj.strong_convexity().max(norm(&g)),
        };
        q.iter_mut().for_each(|v| *v = *v * gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
            let b = *rho * dot(y, &q);
            axpy(a - b, s, &mut q);
        }
        let mut slope = -dot(&g, &q);
        if !(slope < T::zero()) {
            hist.clear();
            q = g.clone();
            slope = -dot(&g, &g);
        }
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = w.clone();
            axpy(-t, &q, &mut cand);
            let fc = obj.value(&cand);
            if sufficient_decrease(fc, f, t, slope) {
                accepted = Some((cand, fc));
                break;
            }
            t = t * T::lit(0.5);
        }
        let Some((cand, fc)) = accepted else {
            return Err(not_converged(iter + 1, &g, tol));
        };
        let g_new = obj.gradient(&cand);
        let s: Vec<T> = cand.iter().zip(&w).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&y, &y) {
            if hist.len() == memory {
                hist.pop_front();
            }
            hist.push_back((s, y, T::one() / sy));
        }
        w = cand;
        g = g_new;
        f = fc;
    }
    if norm(&g) <= tol {
        Ok(w)
    } else {
        Err(not_converged(max_iter, &g, tol))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub lambda: T,
    /// Per-coordinate standard deviation of the objective perturbation `b`.
    pub alpha: T,
    pub loss: LossKind,
    pub solver: SolverOptions<T>,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn new(lambda: T, alpha: T, loss: LossKind) -> Self {
        Self {
            lambda,
            alpha,
            loss,
            solver: SolverOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > T::zero()) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.alpha >= T::zero()) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryClassifier<T> {
    pub weights: Vec<T>,
    pub noise: Vec<T>,
}

/// A trained (or unlearned) model: one binary classifier, or one per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    classifiers: Vec<BinaryClassifier<T>>,
    lambda: T,
    alpha: T,
    loss: LossKind,
    seed: u64,
    num_classes: usize,
}

/// Draws one `N(0, alpha^2 I)` noise vector per classifier from `seed`.
pub fn draw_noise<T: Scalar>(classifiers: usize, width: usize, alpha: T, seed: u64) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..classifiers)
        .map(|_| {
            (0..width)
                .map(|_| {
                    let s: f64 = StandardNormal.sample(&mut rng);
                    alpha * T::lit(s)
                })
                .collect()
        })
        .collect()
}

/// Sub-seed for the `counter`-th derived stream of `seed` (splitmix64 mixing).
pub fn derive_seed(seed: u64, counter: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(counter))
}

fn check_embedding<T: Scalar>(dataset: &Dataset<T>, z: &EmbeddingMatrix<T>) -> Result<()> {
    if z.rows() != dataset.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "embedding has {} rows, dataset has {} nodes",
            z.rows(),
            dataset.node_count()
        )));
    }
    Ok(())
}

/// Trains on the current training set of `dataset`, drawing the perturbation from `seed`.
pub fn train<T: Scalar>(
    dataset: &Dataset<T>,
    z: &EmbeddingMatrix<T>,
    config: &TrainConfig<T>,
    seed: u64,
) -> Result<ModelState<T>> {
    config.validate()?;
    let noise = draw_noise(dataset.classifier_count(), z.width(), config.alpha, seed);
    train_with_noise(dataset, z, config, noise, seed)
}

/// Trains with a caller-supplied perturbation (one vector per classifier).
pub fn train_with_noise<T: Scalar>(
    dataset: &Dataset<T>,
    z: &EmbeddingMatrix<T>,
    config: &TrainConfig<T>,
    noise: Vec<Vec<T>>,
    seed: u64,
) -> Result<ModelState<T>> {
    config.validate()?;
    check_embedding(dataset, z)?;
    if noise.len() != dataset.classifier_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} noise vectors for {} classifiers",
            noise.len(),
            dataset.classifier_count()
        )));
    }
    let train_rows = dataset.training_nodes();
    let mut classifiers = Vec::with_capacity(noise.len());
    for (c, b) in noise.into_iter().enumerate() {
        let obj = Objective::from_rows(z.values(), dataset.targets(c), train_rows.clone(), config.lambda, config.loss, &b)?;
        let w = minimize(&obj, vec![T::zero(); z.width()], &config.solver)?;
        classifiers.push(BinaryClassifier { weights: w, noise: b });
    }
    Ok(ModelState {
        classifiers,
        lambda: config.lambda,
        alpha: config.alpha,
        loss: config.loss,
        seed,
        num_classes: dataset.num_classes(),
    })
}

impl<T: Scalar> ModelState<T> {
    /// Assembles a model from parts, e.g. an oracle retrain or a deserialised state.
    pub fn from_parts(
        classifiers: Vec<BinaryClassifier<T>>,
        lambda: T,
        alpha: T,
        loss: LossKind,
        seed: u64,
        num_classes: usize,
    ) -> Self {
        Self {
            classifiers,
            lambda,
            alpha,
            loss,
            seed,
            num_classes,
        }
    }

    pub fn classifiers(&self) -> &[BinaryClassifier<T>] {
        &self.classifiers
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn width(&self) -> usize {
        self.classifiers.first().map_or(0, |c| c.weights.len())
    }

    pub(crate) fn with_weights(&self, weights: Vec<Vec<T>>) -> Self {
        let classifiers = self
            .classifiers
            .iter()
            .zip(weights)
            .map(|(c, w)| BinaryClassifier {
                weights: w,
                noise: c.noise.clone(),
            })
            .collect();
        Self {
            classifiers,
            ..self.clone()
        }
    }

    /// Objective of classifier `c` on the current training set of `dataset`.
    pub fn objective<'a>(
        &'a self,
        c: usize,
        dataset: &Dataset<T>,
        z: &'a EmbeddingMatrix<T>,
    ) -> Result<Objective<'a, T>> {
        check_embedding(dataset, z)?;
        if z.width() != self.width() {
            return Err(Error::DimensionMismatch(format!(
                "embedding width {} differs from model width {}",
                z.width(),
                self.width()
            )));
        }
        Objective::from_rows(
            z.values(),
            dataset.targets(c),
            dataset.training_nodes(),
            self.lambda,
            self.loss,
            &self.classifiers[c].noise,
        )
    }

    pub fn scores(&self, z: &EmbeddingMatrix<T>, i: usize) -> Vec<T> {
        self.classifiers.iter().map(|c| dot(z.row(i), &c.weights)).collect()
    }

    /// Binary: class 1 when the score is `>= 0` (so `sign(0) = +1`).
    /// Multi-class: argmax of the one-vs-rest scores, ties to the lowest index.
    pub fn predict(&self, z: &EmbeddingMatrix<T>, i: usize) -> usize {
        let s = self.scores(z, i);
        if self.num_classes == 2 && s.len() == 1 {
            return usize::from(s[0] >= T::zero());
        }
        let mut best = 0;
        for (k, &v) in s.iter().enumerate().skip(1) {
            if v > s[best] {
                best = k;
            }
        }
        best
    }

    /// Fraction of `nodes` whose predicted class equals `labels[node]`.
    pub fn accuracy(&self, z: &EmbeddingMatrix<T>, labels: &[usize], nodes: &[usize]) -> Result<f64> {
        if nodes.is_empty() {
            return Err(Error::InvalidParameter("accuracy over an empty node set".into()));
        }
        let hits = nodes.iter().filter(|&&i| self.predict(z, i) == labels[i]).count();
        Ok(hits as f64 / nodes.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use crate::graph::GraphCsr;
    use crate::propagation::PropagationConfig;
    use rand::Rng;

    fn random_problem(n: usize, d: usize, seed: u64) -> (DenseMatrix<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = DenseMatrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        crate::dataset::Dataset::cap_feature_norms(&mut z);
        let y = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let b = (0..d).map(|_| rng.random_range(-0.1..0.1)).collect();
        (z, y, b)
    }

    #[test]
    fn logistic_value_at_zero() {
        let (z, y, _) = random_problem(7, 3, 1);
        let b = vec![0.0; 3];
        let obj = Objective::new(&z, y, &[true; 7], 0.1, LossKind::Logistic, &b).unwrap();
        assert!((obj.value(&[0.0; 3]) - 7.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn least_squares_value_at_zero() {
        let (z, y, _) = random_problem(5, 2, 2);
        let y: Vec<f64> = y.iter().enumerate().map(|(i, v)| v * (i as f64 + 0.5)).collect();
        let b = vec![0.0; 2];
        let expected: f64 = y.iter().map(|v| v * v).sum();
        let obj = Objective::new(&z, y, &[true; 5], 0.1, LossKind::LeastSquares, &b).unwrap();
        assert!((obj.value(&[0.0; 2]) - expected).abs() < 1e-12);
    }

    #[test]
    fn logistic_single_point_gradient_at_zero() {
        let z: DenseMatrix<f64> = DenseMatrix::from_rows(&[[0.3, -0.4]]).unwrap();
        let b = vec![0.05, -0.02];
        let obj = Objective::new(&z, vec![-1.0], &[true], 0.5, LossKind::Logistic, &b).unwrap();
        let g = obj.gradient(&[0.0, 0.0]);
        // -1/2 * y * z + b
        assert!((g[0] - (0.5 * 0.3 + 0.05)).abs() < 1e-15);
        assert!((g[1] - (0.5 * -0.4 - 0.02)).abs() < 1e-15);
    }

    #[test]
    fn logistic_hessian_at_zero() {
        let (z, y, b) = random_problem(6, 3, 3);
        let obj = Objective::new(&z, y, &[true; 6], 0.2, LossKind::Logistic, &b).unwrap();
        let h = obj.hessian(&[0.0; 3]);
        for a in 0..3 {
            for c in 0..3 {
                let mut e: f64 = (0..6).map(|i| 0.25 * z[(i, a)] * z[(i, c)]).sum();
                if a == c {
                    e += 0.2 * 6.0;
                }
                assert!((h[(a, c)] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn least_squares_hessian_independent_of_w() {
        let (z, y, b) = random_problem(8, 3, 4);
        let mask = [true, false, true, true, false, true, true, true];
        let obj = Objective::new(&z, y, &mask, 0.3, LossKind::LeastSquares, &b).unwrap();
        let h0 = obj.hessian(&[0.0; 3]);
        let h1 = obj.hessian(&[1.0, -2.0, 0.7]);
        assert_eq!(h0, h1);
        let rows: Vec<usize> = (0..8).filter(|&i| mask[i]).collect();
        let g = z.gram_of_rows(&rows);
        for a in 0..3 {
            for c in 0..3 {
                let e = 2.0 * g[(a, c)] + if a == c { 0.3 * 6.0 } else { 0.0 };
                assert!((h0[(a, c)] - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn empty_mask_is_error() {
        let (z, y, b) = random_problem(3, 2, 5);
        assert!(matches!(
            Objective::new(&z, y, &[false; 3], 0.1, LossKind::Logistic, &b),
            Err(Error::EmptyTrainingSet)
        ));
    }

    #[test]
    fn least_squares_newton_matches_normal_equations() {
        let (z, y, b) = random_problem(30, 4, 6);
        let obj = Objective::new(&z, y.clone(), &[true; 30], 0.01, LossKind::LeastSquares, &b).unwrap();
        let w = minimize(&obj, vec![0.0; 4], &SolverOptions::default()).unwrap();
        // (2 Z^T Z + lambda m I) w = 2 Z^T y - b
        let rows: Vec<usize> = (0..30).collect();
        let mut a = z.gram_of_rows(&rows);
        a.scale_in_place(2.0);
        for i in 0..4 {
            a[(i, i)] += 0.01 * 30.0;
        }
        let mut rhs: Vec<f64> = b.iter().map(|v| -v).collect();
        for (i, &yi) in y.iter().enumerate().take(30) {
            axpy(2.0 * yi, z.row(i), &mut rhs);
        }
        let w_closed = hessian_solve(&a, &rhs).unwrap();
        for (p, q) in w.iter().zip(&w_closed) {
            assert!((p - q).abs() < 1e-8);
        }
        assert!(norm(&obj.gradient(&w)) < 1e-8);
    }

    #[test]
    fn lbfgs_agrees_with_newton() {
        let (z, y, b) = random_problem(40, 5, 7);
        let obj = Objective::new(&z, y, &[true; 40], 0.05, LossKind::Logistic, &b).unwrap();
        let wn = minimize(&obj, vec![0.0; 5], &SolverOptions::default()).unwrap();
        let opts = SolverOptions {
            method: SolverMethod::Lbfgs,
            ..SolverOptions::default()
        };
        let wl = minimize(&obj, vec![0.0; 5], &opts).unwrap();
        assert!(norm(&obj.gradient(&wl)) <= 1e-8 * 40.0);
        for (p, q) in wn.iter().zip(&wl) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn separable_two_points_converge() {
        let z: DenseMatrix<f64> = DenseMatrix::from_rows(&[[1.0], [-1.0]]).unwrap();
        let b = [0.0];
        let obj = Objective::new(&z, vec![1.0, -1.0], &[true, true], 1.0, LossKind::Logistic, &b).unwrap();
        let w = minimize(&obj, vec![0.0], &SolverOptions::default()).unwrap();
        assert!(w[0].is_finite() && w[0] > 0.0);
        assert!(norm(&obj.gradient(&w)) <= 2e-8);
    }

    #[test]
    fn iteration_cap_is_an_error() {
        let (z, y, b) = random_problem(20, 3, 8);
        let obj = Objective::new(&z, y, &[true; 20], 1e-3, LossKind::Logistic, &b).unwrap();
        let opts = SolverOptions {
            max_iterations: 1,
            ..SolverOptions::default()
        };
        assert!(matches!(minimize(&obj, vec![0.0; 3], &opts), Err(Error::NotConverged { .. })));
    }

    fn toy_dataset(labels: Vec<usize>, classes: usize, x: DenseMatrix<f64>) -> (Dataset<f64>, EmbeddingMatrix<f64>) {
        let n = labels.len();
        let g = GraphCsr::from_edges(n, []).unwrap();
        let ds = Dataset::new(g, x.clone(), labels, classes, vec![Split::Train; n]).unwrap();
        (ds, EmbeddingMatrix::from_values(x, PropagationConfig::sgc(0)))
    }

    #[test]
    fn zero_weights_balanced_binary_accuracy_half() {
        let x = DenseMatrix::from_rows(&[[0.1], [0.2], [0.3], [0.4]]).unwrap();
        let (ds, z) = toy_dataset(vec![0, 1, 0, 1], 2, x);
        let m = ModelState::from_parts(
            vec![BinaryClassifier { weights: vec![0.0], noise: vec![0.0] }],
            1.0,
            0.0,
            LossKind::Logistic,
            0,
            2,
        );
        assert_eq!(m.accuracy(&z, ds.labels(), &[0, 1, 2, 3]).unwrap(), 0.5);
        assert!(m.accuracy(&z, ds.labels(), &[]).is_err());
    }

    #[test]
    fn separated_toy_accuracy_one() {
        let x = DenseMatrix::from_rows(&[[0.9, 0.0], [0.0, 0.9], [0.8, 0.1], [0.1, 0.8]]).unwrap();
        let (ds, z) = toy_dataset(vec![0, 1, 0, 1], 2, x);
        let m = train(&ds, &z, &TrainConfig::new(0.01, 0.0, LossKind::Logistic), 3).unwrap();
        assert_eq!(m.accuracy(&z, ds.labels(), &[0, 1, 2, 3]).unwrap(), 1.0);
    }

    #[test]
    fn multiclass_argmax_matches_rescoring() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 30;
        let mut x = DenseMatrix::from_vec(n, 3, (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        Dataset::cap_feature_norms(&mut x);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let (ds, z) = toy_dataset(labels, 3, x.clone());
        let m = train(&ds, &z, &TrainConfig::new(0.05, 0.1, LossKind::Logistic), 9).unwrap();
        for i in 0..n {
            let scores: Vec<f64> = m.classifiers().iter().map(|c| (0..3).map(|k| x[(i, k)] * c.weights[k]).sum()).collect();
            let mut best = 0;
            for k in 1..3 {
                if scores[k] > scores[best] {
                    best = k;
                }
            }
            assert_eq!(m.predict(&z, i), best);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let x = DenseMatrix::from_rows(&[[0.9, 0.0], [0.0, 0.9], [0.8, 0.1], [0.1, 0.8]]).unwrap();
        let (ds, z) = toy_dataset(vec![0, 1, 0, 1], 2, x);
        let cfg = TrainConfig::new(0.1, 0.5, LossKind::Logistic);
        let a = train(&ds, &z, &cfg, 42).unwrap();
        let b = train(&ds, &z, &cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = train(&ds, &z, &cfg, 43).unwrap();
        assert_ne!(a.classifiers()[0].noise, c.classifiers()[0].noise);
    }

    #[test]
    fn rejects_bad_parameters() {
        let x = DenseMatrix::from_rows(&[[0.9], [0.1]]).unwrap();
        let (ds, z) = toy_dataset(vec![0, 1], 2, x);
        assert!(train(&ds, &z, &TrainConfig::new(0.0, 0.0, LossKind::Logistic), 0).is_err());
        assert!(train(&ds, &z, &TrainConfig::new(0.1, -1.0, LossKind::Logistic), 0).is_err());
    }

    #[test]
    fn trains_in_f32() {
        let x = DenseMatrix::from_rows(&[[0.9f32, 0.0], [0.0, 0.9], [0.8, 0.1], [0.1, 0.8]]).unwrap();
        let g = GraphCsr::from_edges(4, []).unwrap();
        let ds = Dataset::new(g, x.clone(), vec![0, 1, 0, 1], 2, vec![Split::Train; 4]).unwrap();
        let z = EmbeddingMatrix::from_values(x, PropagationConfig::sgc(0));
        let m = train(&ds, &z, &TrainConfig::new(0.05f32, 0.0, LossKind::Logistic), 1).unwrap();
        assert_eq!(m.accuracy(&z, ds.labels(), &[0, 1, 2, 3]).unwrap(), 1.0);
    }

    #[test]
    fn logistic_derivative_bounds_pointwise() {
        for k in -400..=400 {
            let s = k as f64 * 0.05;
            for y in [-1.0, 1.0] {
                let d1 = LossKind::Logistic.first(s, y);
                let d2 = LossKind::Logistic.second(s, y);
                assert!(d1.abs() <= 1.0);
                assert!(d2 > 0.0 || s.abs() > 30.0);
                assert!(d2 <= 0.25);
            }
        }
    }
}
