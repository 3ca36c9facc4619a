//! Residual bounds, noise calibration and the privacy-budget accountant.
//!
//! The noise parameter `alpha` is always a standard deviation: `b ~ N(0, alpha^2 I)`.

use serde::{Deserialize, Serialize};

use crate::dense::{dot, hessian_solve, norm, DenseMatrix};
use crate::error::{Error, Result};
use crate::model::LossConstants;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalKind {
    NodeFeature,
    Edge,
    Node,
}

impl RemovalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RemovalKind::NodeFeature => "node-feature",
            RemovalKind::Edge => "edge",
            RemovalKind::Node => "node",
        }
    }
}

impl std::str::FromStr for RemovalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node-feature" | "feature" => Ok(RemovalKind::NodeFeature),
            "edge" => Ok(RemovalKind::Edge),
            "node" => Ok(RemovalKind::Node),
            other => Err(Error::InvalidParameter(format!("unknown removal kind '{other}'"))),
        }
    }
}

/// Closed-form worst-case bound on the gradient residual norm after one removal.
///
/// `m` is the training set size before the removal, `degree` the self-looped degree
/// of the removed node in the graph before the removal (ignored for edges).
///
/// * node feature: `g2 (2 c l + (c g1 + l c1) d)^2 / (l^4 (m - 1))`
/// * edge: `16 g2 K^2 (c g1 + c1 l)^2 / (l^4 m)`
/// * node: `g2 (2 c l + K (c g1 + c1 l)(2 d - 1))^2 / (l^4 (m - 1))`
///
/// The node-feature bound also covers GPR embeddings scaled by `1 / (K + 1)`.
pub fn worst_case_bound<T: Scalar>(
    kind: RemovalKind,
    constants: &LossConstants<T>,
    lambda: T,
    m: usize,
    depth: usize,
    degree: usize,
) -> Result<T> {
    if !(lambda > T::zero()) {
        return Err(Error::InvalidParameter("lambda must be positive".into()));
    }
    let min_m = if kind == RemovalKind::Edge { 1 } else { 2 };
    if m < min_m {
        return Err(Error::InvalidParameter(format!(
            "{} bound needs at least {min_m} training points, got {m}",
            kind.as_str()
        )));
    }
    if kind != RemovalKind::Edge && degree == 0 {
        return Err(Error::InvalidParameter("degree must be at least 1".into()));
    }
    let LossConstants { c, c1, gamma1, gamma2 } = *constants;
    if gamma2 == T::zero() {
        // constant curvature: the Newton step is exact
        return Ok(T::zero());
    }
    let two = T::lit(2.0);
    let l4 = lambda.powi(4);
    let k = T::from_usize_lossy(depth);
    let d = T::from_usize_lossy(degree);
    let mixed = c * gamma1 + c1 * lambda;
    let bound = match kind {
        RemovalKind::NodeFeature => {
            let t = two * c * lambda + mixed * d;
            gamma2 * t * t / (l4 * T::from_usize_lossy(m - 1))
        }
        RemovalKind::Edge => {
            if depth == 0 {
                return Ok(T::zero());
            }
            T::lit(16.0) * gamma2 * k * k * mixed * mixed / (l4 * T::from_usize_lossy(m))
        }
        RemovalKind::Node => {
            let t = two * c * lambda + k * mixed * (two * d - T::one());
            gamma2 * t * t / (l4 * T::from_usize_lossy(m - 1))
        }
    };
    Ok(bound)
}

pub const POWER_ITERATION_TOLERANCE: f64 = 1e-6;
pub const POWER_ITERATION_MAX: usize = 10_000;

/// Spectral norm of the sub-matrix formed by `rows` of `z`.
///
/// Power iteration on the Gram matrix from the normalised all-ones vector, stopped at
/// relative change `1e-6`; one extra iteration is run after convergence and the larger
/// of the two estimates is inflated by the tolerance, biasing the result upwards.
pub fn operator_norm<T: Scalar>(z: &DenseMatrix<T>, rows: &[usize]) -> Result<T> {
    let d = z.cols();
    if d == 0 || rows.is_empty() {
        return Ok(T::zero());
    }
    let g = z.gram_of_rows(rows);
    let tol = T::lit(POWER_ITERATION_TOLERANCE).max(T::epsilon() * T::lit(100.0));
    let mut v = vec![T::one() / T::from_usize_lossy(d).sqrt(); d];
    if norm(&g.matvec(&v)) == T::zero() {
        // start vector in the kernel: restart from the heaviest column
        let best = (0..d)
            .max_by(|&a, &b| g[(a, a)].partial_cmp(&g[(b, b)]).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(0);
        if g[(best, best)] == T::zero() {
            return Ok(T::zero());
        }
        v = vec![T::zero(); d];
        v[best] = T::one();
    }
    let mut prev = T::zero();
    for _ in 0..POWER_ITERATION_MAX {
        let u = g.matvec(&v);
        let nu = norm(&u);
        v = u.iter().map(|&x| x / nu).collect();
        if (nu - prev).abs() <= tol * nu {
            let extra = norm(&g.matvec(&v));
            let lambda_max = nu.max(extra) * (T::one() + tol);
            return Ok(lambda_max.sqrt());
        }
        prev = nu;
    }
    Err(Error::PowerIterationNotConverged(POWER_ITERATION_MAX))
}

/// `gamma2 * |Z'|_op * |H^-1 Delta| * |Z' H^-1 Delta|` with `Z'` restricted to the
/// surviving training rows.
pub fn data_dependent_bound<T: Scalar>(
    z_after: &DenseMatrix<T>,
    train_rows: &[usize],
    hessian: &DenseMatrix<T>,
    delta: &[T],
    gamma2: T,
) -> Result<T> {
    if delta.len() != z_after.cols() || hessian.rows() != z_after.cols() {
        return Err(Error::DimensionMismatch(format!(
            "embedding width {}, Hessian {}x{}, delta {}",
            z_after.cols(),
            hessian.rows(),
            hessian.cols(),
            delta.len()
        )));
    }
    if gamma2 == T::zero() || delta.iter().all(|&v| v == T::zero()) {
        return Ok(T::zero());
    }
    let step = hessian_solve(hessian, delta)?;
    let op = operator_norm(z_after, train_rows)?;
    Ok(bound_from_step(z_after, train_rows, &step, op, gamma2))
}

/// Same bound when the Newton step and operator norm are already known.
pub fn bound_from_step<T: Scalar>(z_after: &DenseMatrix<T>, train_rows: &[usize], step: &[T], op_norm: T, gamma2: T) -> T {
    if gamma2 == T::zero() {
        return T::zero();
    }
    let projected: T = train_rows
        .iter()
        .map(|&i| {
            let s = dot(z_after.row(i), step);
            s * s
        })
        .sum::<T>()
        .sqrt();
    gamma2 * op_norm * norm(step) * projected
}

/// Removal-certification parameters: target `(epsilon, delta)` and noise standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams<T> {
    pub epsilon: T,
    pub delta: T,
    pub alpha: T,
}

fn check_epsilon_delta<T: Scalar>(epsilon: T, delta: T) -> Result<()> {
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > T::zero() && delta < T::one()) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// `c0 = sqrt(2 ln(1.5 / delta))`, the inverse of `delta = 1.5 exp(-c0^2 / 2)`.
pub fn noise_multiplier<T: Scalar>(delta: T) -> Result<T> {
    check_epsilon_delta(T::one(), delta)?;
    Ok((T::lit(2.0) * (T::lit(1.5) / delta).ln()).sqrt())
}

/// Accumulated residual norm the noise level can absorb: `alpha * epsilon / c0`.
pub fn budget_from<T: Scalar>(params: &PrivacyParams<T>) -> Result<T> {
    check_epsilon_delta(params.epsilon, params.delta)?;
    if !(params.alpha > T::zero()) || !params.alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {}", params.alpha)));
    }
    Ok(params.alpha * params.epsilon / noise_multiplier(params.delta)?)
}

/// Noise standard deviation `c0 * eps_prime / epsilon` that certifies a residual bound `eps_prime`.
pub fn noise_sigma_for<T: Scalar>(eps_prime: T, epsilon: T, delta: T) -> Result<T> {
    check_epsilon_delta(epsilon, delta)?;
    if !(eps_prime > T::zero()) || !eps_prime.is_finite() {
        return Err(Error::InvalidParameter(format!("residual bound must be positive, got {eps_prime}")));
    }
    Ok(noise_multiplier(delta)? * eps_prime / epsilon)
}

/// Running sum of residual bounds since the last retrain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetAccountant<T> {
    budget: T,
    accumulated: T,
    retrain_count: usize,
}

impl<T: Scalar> BudgetAccountant<T> {
    pub fn new(budget: T) -> Result<Self> {
        if !(budget >= T::zero()) {
            return Err(Error::InvalidParameter(format!("budget must be non-negative, got {budget}")));
        }
        Ok(Self {
            budget,
            accumulated: T::zero(),
            retrain_count: 0,
        })
    }

    pub fn unlimited() -> Self {
        Self {
            budget: T::infinity(),
            accumulated: T::zero(),
            retrain_count: 0,
        }
    }

    pub fn budget(&self) -> T {
        self.budget
    }

    pub fn accumulated(&self) -> T {
        self.accumulated
    }

    pub fn retrain_count(&self) -> usize {
        self.retrain_count
    }

    /// Adds `bound`; returns `true` once the running sum exceeds the budget.
    pub fn accumulate(&mut self, bound: T) -> Result<bool> {
        if !(bound >= T::zero()) {
            return Err(Error::InvalidParameter(format!("residual bound must be non-negative, got {bound}")));
        }
        self.accumulated = self.accumulated + bound;
        Ok(self.accumulated > self.budget)
    }

    pub fn record_retrain(&mut self) {
        self.accumulated = T::zero();
        self.retrain_count += 1;
    }
}
