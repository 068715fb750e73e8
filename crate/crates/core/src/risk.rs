//! Distributionally robust CVaR constraint and the Risk Score.
//!
//! For a quadratic safety loss `l(x) = (x - mu)^T E (x - mu) + e` and a
//! pedestrian position known only through its mean `mu` and covariance
//! `Sigma`, the worst-case CVaR at level `epsilon` over every distribution with
//! those two moments is `e + Tr(Sigma E) / epsilon`. A non-positive value
//! guarantees collision probability at most `epsilon` under every such
//! distribution.

use thiserror::Error;

use crate::safeset::SafeEllipsoid;
use crate::Mat2;

/// Constraint value assigned when no free ellipse exists (mean inside the
/// inflated robot disc). Finite so Risk Scores still rank bad trajectories.
pub const INFEASIBLE_CONSTRAINT: f64 = 1e3;

/// Per-step constraint value when no pedestrian is present.
pub const EMPTY_STEP_CONSTRAINT: f64 = -1.0;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("{ellipsoids} ellipsoids but {covariances} covariances")]
    LengthMismatch { ellipsoids: usize, covariances: usize },
    #[error("need at least {required} loss samples for epsilon {epsilon}, got {got}")]
    TooFewSamples { required: usize, got: usize, epsilon: f64 },
}

fn check_epsilon(epsilon: f64) -> Result<(), RiskError> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(RiskError::InvalidEpsilon(epsilon))
    }
}

/// `Tr(A B)` for 2x2 matrices without forming the product.
fn trace_of_product(a: &Mat2, b: &Mat2) -> f64 {
    a[(0, 0)] * b[(0, 0)] + a[(0, 1)] * b[(1, 0)] + a[(1, 0)] * b[(0, 1)] + a[(1, 1)] * b[(1, 1)]
}

/// Worst-case CVaR of the safety loss: `e + Tr(Sigma E) / epsilon`, or
/// [`INFEASIBLE_CONSTRAINT`] for an infeasible ellipsoid.
pub fn dr_cvar_bound(ell: &SafeEllipsoid, sigma: &Mat2, epsilon: f64) -> Result<f64, RiskError> {
    check_epsilon(epsilon)?;
    if !ell.feasible {
        return Ok(INFEASIBLE_CONSTRAINT);
    }
    Ok(ell.offset + trace_of_product(sigma, &ell.shape) / epsilon)
}

/// Worst pedestrian at one step: the maximum bound and its index.
pub fn step_constraint(
    ellipsoids: &[SafeEllipsoid],
    sigmas: &[Mat2],
    epsilon: f64,
) -> Result<(f64, Option<usize>), RiskError> {
    check_epsilon(epsilon)?;
    if ellipsoids.len() != sigmas.len() {
        return Err(RiskError::LengthMismatch {
            ellipsoids: ellipsoids.len(),
            covariances: sigmas.len(),
        });
    }
    let mut worst: Option<(usize, f64)> = None;
    for (i, (ell, sigma)) in ellipsoids.iter().zip(sigmas).enumerate() {
        let g = dr_cvar_bound(ell, sigma, epsilon)?;
        if worst.is_none_or(|(_, w)| g > w) {
            worst = Some((i, g));
        }
    }
    Ok(match worst {
        Some((i, g)) => (g, Some(i)),
        None => (EMPTY_STEP_CONSTRAINT, None),
    })
}

/// `sum_{k=1..K} gamma^k g_k`.
pub fn risk_score(per_step_g: &[f64], gamma: f64) -> f64 {
    per_step_g
        .iter()
        .enumerate()
        .map(|(i, g)| gamma.powi(i as i32 + 1) * g)
        .sum()
}

/// Constraint values of one candidate trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub per_step_g: Vec<f64>,
    /// All steps satisfy the constraint.
    pub feasible: bool,
    pub risk_score: f64,
    pub worst_ped_per_step: Vec<Option<u64>>,
}

impl RiskReport {
    pub fn new(per_step_g: Vec<f64>, worst_ped_per_step: Vec<Option<u64>>, gamma: f64) -> Self {
        let feasible = per_step_g.iter().all(|g| *g <= 0.0);
        let risk_score = risk_score(&per_step_g, gamma);
        Self { per_step_g, feasible, risk_score, worst_ped_per_step }
    }
}

/// Empirical VaR and CVaR of loss samples: VaR is the `ceil((1-eps) N)`-th
/// smallest sample, CVaR the mean of the `ceil(eps N)` largest.
pub fn empirical_var_cvar(samples: &[f64], epsilon: f64) -> Result<(f64, f64), RiskError> {
    check_epsilon(epsilon)?;
    let n = samples.len();
    let required = ceil_count(1.0 / epsilon);
    if n < required || n == 0 {
        return Err(RiskError::TooFewSamples { required, got: n, epsilon });
    }
    let var_rank = ceil_count((1.0 - epsilon) * n as f64).clamp(1, n);
    let tail = ceil_count(epsilon * n as f64).clamp(1, n);
    let mut buf = samples.to_vec();
    let (_, var, _) = buf.select_nth_unstable_by(var_rank - 1, f64::total_cmp);
    let var = *var;
    let (_, pivot, upper) = buf.select_nth_unstable_by(n - tail, f64::total_cmp);
    let cvar = (*pivot + upper.iter().sum::<f64>()) / tail as f64;
    Ok((var, cvar))
}

/// `ceil` that ignores representation error just above an integer.
fn ceil_count(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}
