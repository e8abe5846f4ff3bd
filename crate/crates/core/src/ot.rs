//! Entropic optimal transport between two batches of latent vectors.
//!
//! The cost between row `i` of one batch and row `j` of the other is their
//! Euclidean distance divided by the largest such distance, so every cost lies
//! in `[0, 1]`. The plan is the entropically regularised coupling with uniform
//! marginals, computed by Sinkhorn iterations on the dual potentials in the log
//! domain:
//!
//! ```text
//! f_i = ε log a_i − ε LSE_j((g_j − C_ij) / ε)
//! g_j = ε log b_j − ε LSE_i((f_i − C_ij) / ε)
//! Γ_ij = exp((f_i + g_j − C_ij) / ε)
//! ```

use serde::{Deserialize, Serialize};

use crate::nn::{NnError, Tensor2};

#[derive(Debug, thiserror::Error)]
pub enum OtError {
    #[error("feature dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("cost matrix contains a non-finite entry")]
    NonFiniteCost,
    #[error("plan of shape {plan:?} cannot transport batches of {rows_p} and {rows_q} rows")]
    PlanShape {
        plan: (usize, usize),
        rows_p: usize,
        rows_q: usize,
    },
    #[error(transparent)]
    Tensor(#[from] NnError),
}

pub type OtResult<T> = Result<T, OtError>;

/// Pairwise costs between two batches, normalised to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    values: Tensor2,
}

impl CostMatrix {
    /// Wraps an arbitrary finite cost table (used by the CSV debug path).
    pub fn from_tensor(values: Tensor2) -> OtResult<Self> {
        if values.is_empty() {
            return Err(OtError::EmptyBatch);
        }
        if !values.is_finite() {
            return Err(OtError::NonFiniteCost);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Tensor2 {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn m(&self) -> usize {
        self.values.cols()
    }

    pub fn is_zero(&self) -> bool {
        self.values.as_slice().iter().all(|&c| c == 0.0)
    }
}

/// Normalised Euclidean cost between the rows of `rp` (n×d) and `rq` (m×d).
///
/// When every distance is zero the all-zero matrix is returned.
pub fn cost_matrix(rp: &Tensor2, rq: &Tensor2) -> OtResult<CostMatrix> {
    if rp.cols() != rq.cols() {
        return Err(OtError::DimensionMismatch(rp.cols(), rq.cols()));
    }
    if rp.rows() == 0 || rq.rows() == 0 {
        return Err(OtError::EmptyBatch);
    }
    let (n, m) = (rp.rows(), rq.rows());
    let mut values = Tensor2::zeros(n, m);
    let mut max = 0.0f64;
    for i in 0..n {
        let a = rp.row(i);
        for j in 0..m {
            let d = a
                .iter()
                .zip(rq.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            max = max.max(d);
            values.set(i, j, d);
        }
    }
    if !max.is_finite() {
        return Err(OtError::NonFiniteCost);
    }
    if max > 0.0 {
        for v in values.as_mut_slice() {
            *v /= max;
        }
    }
    Ok(CostMatrix { values })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

/// Coupling between the rows of two batches.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub gamma: Tensor2,
    pub epsilon: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

impl TransportPlan {
    /// The single-sample plan `[[1]]`.
    pub fn unit() -> Self {
        Self::uniform(1, 1, f64::NAN)
    }

    /// Product of uniform marginals, `1 / (n m)` everywhere.
    pub fn uniform(n: usize, m: usize, epsilon: f64) -> Self {
        Self {
            gamma: Tensor2::filled(n, m, 1.0 / (n * m) as f64),
            epsilon,
            iterations_used: 0,
            converged: true,
        }
    }

    /// Largest deviation of row and column sums from `1/n` and `1/m`.
    pub fn marginal_violation(&self) -> MarginalError {
        marginal_violation(&self.gamma)
    }
}

fn marginal_violation(gamma: &Tensor2) -> MarginalError {
    let (n, m) = gamma.shape();
    let a = 1.0 / n as f64;
    let b = 1.0 / m as f64;
    let rows = gamma
        .row_sums()
        .into_iter()
        .fold(0.0f64, |e, s| e.max((s - a).abs()));
    let cols = gamma
        .col_sums()
        .into_iter()
        .fold(0.0f64, |e, s| e.max((s - b).abs()));
    MarginalError { rows, cols }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginalError {
    pub rows: f64,
    pub cols: f64,
}

impl MarginalError {
    pub fn max(&self) -> f64 {
        self.rows.max(self.cols)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn with uniform marginals.
///
/// Stops once the largest marginal violation drops below `tol`, or after
/// `max_iters` sweeps; `converged` records which. A zero cost matrix yields
/// the uniform product plan without iterating.
pub fn sinkhorn(cost: &CostMatrix, config: &SinkhornConfig) -> OtResult<TransportPlan> {
    let eps = config.epsilon;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(OtError::InvalidEpsilon(eps));
    }
    let (n, m) = (cost.n(), cost.m());
    if cost.is_zero() {
        return Ok(TransportPlan::uniform(n, m, eps));
    }
    let c = cost.values();
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    let plan_from = |f: &[f64], g: &[f64]| {
        let mut gamma = Tensor2::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                gamma.set(i, j, ((f[i] + g[j] - c.get(i, j)) / eps).exp());
            }
        }
        gamma
    };

    let mut iterations = 0;
    let mut gamma = plan_from(&f, &g);
    let violation = |gamma: &Tensor2| marginal_violation(gamma).max();
    let mut converged = violation(&gamma) < config.tol;
    while !converged && iterations < config.max_iters {
        for i in 0..n {
            let lse = log_sum_exp((0..m).map(|j| (g[j] - c.get(i, j)) / eps));
            f[i] = eps * log_a - eps * lse;
        }
        for j in 0..m {
            let lse = log_sum_exp((0..n).map(|i| (f[i] - c.get(i, j)) / eps));
            g[j] = eps * log_b - eps * lse;
        }
        iterations += 1;
        gamma = plan_from(&f, &g);
        converged = violation(&gamma) < config.tol;
    }
    gamma.ensure_finite("sinkhorn")?;
    Ok(TransportPlan {
        gamma,
        epsilon: eps,
        iterations_used: iterations,
        converged,
    })
}

/// Classic Sinkhorn–Knopp scaling on the Gibbs kernel `exp(-C/ε)`.
///
/// Underflows for small `ε`; kept as an independent reference for the
/// log-domain solver on well-conditioned problems.
pub fn sinkhorn_scaling(cost: &CostMatrix, epsilon: f64, iterations: usize) -> OtResult<Tensor2> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(OtError::InvalidEpsilon(epsilon));
    }
    let (n, m) = (cost.n(), cost.m());
    let kernel = cost.values().map(|c| (-c / epsilon).exp());
    let a = 1.0 / n as f64;
    let b = 1.0 / m as f64;
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    for _ in 0..iterations {
        for i in 0..n {
            let s: f64 = (0..m).map(|j| kernel.get(i, j) * v[j]).sum();
            u[i] = a / s;
        }
        for j in 0..m {
            let s: f64 = (0..n).map(|i| kernel.get(i, j) * u[i]).sum();
            v[j] = b / s;
        }
    }
    let mut gamma = Tensor2::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            gamma.set(i, j, u[i] * kernel.get(i, j) * v[j]);
        }
    }
    Ok(gamma)
}

/// Moves each batch into the other's space through the plan:
/// returns `(Γ · R_p, Γᵀ · R_q)`.
pub fn transport(plan: &TransportPlan, rp: &Tensor2, rq: &Tensor2) -> OtResult<(Tensor2, Tensor2)> {
    let gamma = &plan.gamma;
    let (n, m) = gamma.shape();
    if m != rp.rows() || n != rq.rows() || rp.cols() != rq.cols() {
        return Err(OtError::PlanShape {
            plan: (n, m),
            rows_p: rp.rows(),
            rows_q: rq.rows(),
        });
    }
    let p_to_q = gamma.matmul(rp)?;
    let q_to_p = gamma.matmul_tn(rq)?;
    Ok((p_to_q, q_to_p))
}

/// Gradients of [`transport`] with the plan held constant.
pub fn transport_backward(
    plan: &TransportPlan,
    grad_p_to_q: &Tensor2,
    grad_q_to_p: &Tensor2,
) -> OtResult<(Tensor2, Tensor2)> {
    let grad_rp = plan.gamma.matmul_tn(grad_p_to_q)?;
    let grad_rq = plan.gamma.matmul(grad_q_to_p)?;
    Ok((grad_rp, grad_rq))
}
