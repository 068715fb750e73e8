//! Monte Carlo checks of the closed-form risk bound, run on demand.
//!
//! For random geometries and covariances, samples are drawn from several
//! distributions sharing the same mean and covariance. The bound must dominate
//! the empirical CVaR of the safety loss in every family, and a non-positive
//! bound must keep the empirical violation rate at or below epsilon.

use nalgebra::Rotation2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::Serialize;

use crate::risk::{dr_cvar_bound, empirical_var_cvar};
use crate::safeset::{build_safe_ellipsoid, SafeEllipsoid, DEFAULT_SEPARATION_MARGIN};
use crate::seed::{rng_for, SimRng};
use crate::{Execution, Mat2, Vec2};

/// Degrees of freedom of the heavy-tailed family.
const STUDENT_DOF: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    /// Independent signs along the covariance factor's columns.
    TwoPoint,
    UniformEllipse,
    /// Student-t rescaled to unit variance.
    HeavyTail,
}

impl Family {
    pub const ALL: [Family; 4] =
        [Family::Gaussian, Family::TwoPoint, Family::UniformEllipse, Family::HeavyTail];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::TwoPoint => "two_point",
            Family::UniformEllipse => "uniform_ellipse",
            Family::HeavyTail => "heavy_tail",
        }
    }

    /// One zero-mean, identity-covariance draw.
    fn standard<R: Rng + ?Sized>(self, rng: &mut R) -> Vec2 {
        match self {
            Family::Gaussian => Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal)),
            Family::TwoPoint => {
                let s = |b: bool| if b { 1.0 } else { -1.0 };
                Vec2::new(s(rng.random()), s(rng.random()))
            }
            Family::UniformEllipse => {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                Vec2::new(theta.cos(), theta.sin()) * std::f64::consts::SQRT_2
            }
            Family::HeavyTail => {
                let t = StudentT::new(STUDENT_DOF).expect("valid dof");
                let scale = ((STUDENT_DOF - 2.0) / STUDENT_DOF).sqrt();
                Vec2::new(t.sample(rng), t.sample(rng)) * scale
            }
        }
    }

    /// `n` draws with mean `mu` and covariance `sigma`.
    pub fn sample<R: Rng + ?Sized>(self, mu: Vec2, sigma: &Mat2, n: usize, rng: &mut R) -> Vec<Vec2> {
        let chol = sigma.cholesky().expect("covariance must be positive definite").l();
        (0..n).map(|_| mu + chol * self.standard(rng)).collect()
    }
}

/// One random (mean, covariance, robot, radius, epsilon) configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskCase {
    pub mu: Vec2,
    pub sigma: Mat2,
    pub robot: Vec2,
    pub radius: f64,
    pub epsilon: f64,
}

impl RiskCase {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let radius = rng.random_range(0.2..0.6);
        let d = radius + rng.random_range(0.2..3.0);
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let robot = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let mu = robot + Vec2::new(heading.cos(), heading.sin()) * d;
        let log_std = |rng: &mut R| (rng.random_range(0.02f64.ln()..0.4f64.ln())).exp();
        let (s1, s2) = (log_std(rng), log_std(rng));
        let rot = Rotation2::new(rng.random_range(0.0..std::f64::consts::PI)).into_inner();
        let sigma = rot * Mat2::new(s1 * s1, 0.0, 0.0, s2 * s2) * rot.transpose();
        let sigma = 0.5 * (sigma + sigma.transpose());
        Self { mu, sigma, robot, radius, epsilon: rng.random_range(0.02..0.3) }
    }

    pub fn ellipsoid(&self) -> SafeEllipsoid {
        build_safe_ellipsoid(self.mu, self.robot, self.radius, self.radius + DEFAULT_SEPARATION_MARGIN)
            .expect("random cases have valid geometry")
    }
}

/// Outcome of one case under one family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FamilyCheck {
    pub family: Family,
    pub bound: f64,
    pub empirical_cvar: f64,
    /// Standard error of the CVaR estimate.
    pub cvar_se: f64,
    pub violation_rate: f64,
    pub dominated: bool,
    /// `None` when the bound is positive and the implication is vacuous.
    pub chance_ok: Option<bool>,
}

/// Checks one case against one family. `sigma_scale` multiplies the covariance
/// seen by the bound only (1 for a faithful check).
pub fn check_family<R: Rng + ?Sized>(
    case: &RiskCase,
    family: Family,
    samples: usize,
    sigma_scale: f64,
    rng: &mut R,
) -> FamilyCheck {
    let ell = case.ellipsoid();
    let bound = dr_cvar_bound(&ell, &(case.sigma * sigma_scale), case.epsilon).expect("valid epsilon");
    let losses: Vec<f64> =
        family.sample(case.mu, &case.sigma, samples, rng).iter().map(|x| ell.loss(x)).collect();
    let (var, cvar) = empirical_var_cvar(&losses, case.epsilon).expect("enough samples");
    let n = losses.len() as f64;
    let excess: Vec<f64> = losses.iter().map(|l| (l - var).max(0.0)).collect();
    let mean_excess = excess.iter().sum::<f64>() / n;
    let var_excess = excess.iter().map(|e| (e - mean_excess).powi(2)).sum::<f64>() / n;
    let cvar_se = var_excess.sqrt() / (case.epsilon * n.sqrt());
    let violation_rate = losses.iter().filter(|&&l| l > 0.0).count() as f64 / n;
    let chance_slack = 3.0 * (case.epsilon * (1.0 - case.epsilon) / n).sqrt();
    FamilyCheck {
        family,
        bound,
        empirical_cvar: cvar,
        cvar_se,
        violation_rate,
        dominated: cvar <= bound + 3.0 * cvar_se,
        chance_ok: (bound <= 0.0).then_some(violation_rate <= case.epsilon + chance_slack),
    }
}

/// Distance from `point` to the boundary of the ellipse `{x : loss(x) <= 0}`,
/// from an eigen-parametrized boundary with golden-section refinement.
pub fn boundary_distance(ell: &SafeEllipsoid, point: Vec2) -> f64 {
    let eig = ell.shape.symmetric_eigen();
    let (sa, sb) = (eig.eigenvalues[0].sqrt(), eig.eigenvalues[1].sqrt());
    let dist = |t: f64| {
        let local = Vec2::new(t.cos() / sa, t.sin() / sb);
        (ell.center + eig.eigenvectors * local - point).norm()
    };
    let n = 720;
    let step = std::f64::consts::TAU / n as f64;
    let best = (0..n).map(|i| i as f64 * step).min_by(|a, b| dist(*a).total_cmp(&dist(*b))).unwrap();
    let (mut lo, mut hi) = (best - step, best + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let (m1, m2) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if dist(m1) < dist(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    dist(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub cases: usize,
    pub samples: usize,
    pub geometries: usize,
    /// Test hook: scales the covariance inside the bound.
    pub sigma_scale: f64,
    pub execution: Execution,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 200,
            samples: 100_000,
            geometries: 10_000,
            sigma_scale: 1.0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub properties: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    /// One `PASS`/`FAIL` line per property.
    pub fn transcript(&self) -> String {
        self.properties
            .iter()
            .map(|p| format!("{} {}: {}\n", if p.passed { "PASS" } else { "FAIL" }, p.name, p.detail))
            .collect()
    }
}

/// Minimum number of (case, family) pairs with a non-positive bound for the
/// chance-constraint property to count as exercised.
const MIN_CHANCE_CHECKS: usize = 40;

/// Runs the domination, chance-constraint and tangency properties.
pub fn run(options: &VerifyOptions) -> VerifyReport {
    let mut case_rng = rng_for(options.seed, &[0]);
    let cases: Vec<RiskCase> = (0..options.cases).map(|_| RiskCase::random(&mut case_rng)).collect();
    let indexed: Vec<(usize, RiskCase)> = cases.into_iter().enumerate().collect();
    let checks: Vec<FamilyCheck> = options
        .execution
        .map(&indexed, |(i, case)| {
            Family::ALL
                .iter()
                .enumerate()
                .map(|(f, family)| {
                    let mut rng: SimRng = rng_for(options.seed, &[1, *i as u64, f as u64]);
                    check_family(case, *family, options.samples, options.sigma_scale, &mut rng)
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();

    let undominated = checks.iter().filter(|c| !c.dominated).count();
    let worst_gap = checks
        .iter()
        .map(|c| (c.empirical_cvar - c.bound) / c.cvar_se.max(f64::MIN_POSITIVE))
        .fold(f64::NEG_INFINITY, f64::max);
    let domination = PropertyResult {
        name: "cvar_domination",
        passed: undominated == 0,
        detail: format!(
            "{} of {} (case, family) pairs exceed bound + 3 SE; max (cvar - bound)/SE = {worst_gap:.2}",
            undominated,
            checks.len()
        ),
    };

    let applicable: Vec<bool> = checks.iter().filter_map(|c| c.chance_ok).collect();
    let chance_failures = applicable.iter().filter(|ok| !**ok).count();
    let chance = PropertyResult {
        name: "chance_constraint",
        passed: chance_failures == 0 && applicable.len() >= MIN_CHANCE_CHECKS,
        detail: format!(
            "{} violations over {} pairs with non-positive bound (need at least {MIN_CHANCE_CHECKS})",
            chance_failures,
            applicable.len()
        ),
    };

    let mut geo_rng = rng_for(options.seed, &[2]);
    let geometries: Vec<(Vec2, Vec2, f64)> = (0..options.geometries)
        .map(|_| {
            let r = geo_rng.random_range(0.1..1.0);
            let gap = geo_rng.random_range(1e-2f64.ln()..5f64.ln()).exp();
            let heading = geo_rng.random_range(0.0..std::f64::consts::TAU);
            let robot = Vec2::new(geo_rng.random_range(-10.0..10.0), geo_rng.random_range(-10.0..10.0));
            (robot + Vec2::new(heading.cos(), heading.sin()) * (r + gap), robot, r)
        })
        .collect();
    let errors: Vec<f64> = options.execution.map(&geometries, |(mu, robot, r)| {
        let ell = build_safe_ellipsoid(*mu, *robot, *r, r + DEFAULT_SEPARATION_MARGIN)
            .expect("valid geometry");
        (boundary_distance(&ell, *robot) - r) / r
    });
    let worst = errors.iter().map(|e| e.abs()).fold(0.0, f64::max);
    let tangency = PropertyResult {
        name: "tangency",
        passed: errors.iter().all(|e| e.abs() <= 1e-6),
        detail: format!("{} geometries, max relative boundary error {worst:.2e}", errors.len()),
    };

    VerifyReport { properties: vec![domination, chance, tangency] }
}
