//! Constrained cross-entropy method over single-integrator control sequences.
//!
//! Each iteration samples sequences from a per-step, per-axis Gaussian,
//! clamps them to the input box, rolls them out, and scores them by the
//! quadratic objective and the per-step distributionally robust constraint.
//! Elites are the cheapest feasible sequences; when fewer than `elites`
//! are feasible the remaining slots go to the lowest Risk Scores.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::moments::MomentField;
use crate::risk::{dr_cvar_bound, RiskError, RiskReport, EMPTY_STEP_CONSTRAINT};
use crate::safeset::{build_safe_ellipsoid, GeometryError};
use crate::{Execution, Mat2, Vec2};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
    #[error("sequence has {got} controls, horizon is {horizon}")]
    SequenceLength { got: usize, horizon: usize },
    #[error("moment field for pedestrian {ped_id} has {len} steps, horizon is {horizon}")]
    ShortMomentField { ped_id: u64, len: usize, horizon: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

/// K planar velocity commands.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    pub controls: Vec<Vec2>,
}

impl ControlSequence {
    pub fn new(controls: Vec<Vec2>) -> Self {
        Self { controls }
    }

    pub fn zeros(k: usize) -> Self {
        Self { controls: vec![Vec2::zeros(); k] }
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// True when every component lies in `[-u_max, u_max]`.
    pub fn within_box(&self, u_max: f64) -> bool {
        self.controls.iter().flat_map(|u| u.iter()).all(|c| c.abs() <= u_max)
    }
}

/// `x_{k+1} = x_k + u_k dt`; returns `K + 1` positions starting at `x0`.
pub fn rollout(x0: Vec2, u: &ControlSequence, dt: f64) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(u.len() + 1);
    let mut x = x0;
    out.push(x);
    for uk in &u.controls {
        x += uk * dt;
        out.push(x);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub q: Mat2,
    pub r: Mat2,
    pub q_terminal: Mat2,
    pub discount: f64,
    /// Use `(x_K - goal)` in the terminal term instead of `x_K`.
    pub terminal_goal_offset: bool,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            q: Mat2::identity() * 0.5,
            r: Mat2::identity() * 0.05,
            q_terminal: Mat2::identity() * 0.5,
            discount: 0.99,
            terminal_goal_offset: false,
        }
    }
}

fn quad(m: &Mat2, v: &Vec2) -> f64 {
    v.dot(&(m * v))
}

/// `sum_{k<K} gamma^k [(x_k - g)^T Q (x_k - g) + u_k^T R u_k] + x_K^T Q_K x_K`.
pub fn trajectory_cost(
    positions: &[Vec2],
    u: &ControlSequence,
    goal: Vec2,
    weights: &CostWeights,
) -> f64 {
    debug_assert_eq!(positions.len(), u.len() + 1);
    let mut cost = 0.0;
    let mut discount = 1.0;
    for (x, uk) in positions.iter().zip(&u.controls) {
        cost += discount * (quad(&weights.q, &(x - goal)) + quad(&weights.r, uk));
        discount *= weights.discount;
    }
    let last = positions[positions.len() - 1];
    let terminal = if weights.terminal_goal_offset { last - goal } else { last };
    cost + quad(&weights.q_terminal, &terminal)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintMode {
    /// Feasibility from the worst-case CVaR bound.
    DistributionallyRobust,
    /// Every sequence admissible; the objective gains
    /// `weight * sum_k gamma^k sum_i max(0, radius - |x_k - mu_i^k|)^2`.
    SoftPenalty { weight: f64, radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub dt: f64,
    pub u_max: f64,
    pub iterations: usize,
    pub samples: usize,
    pub elites: usize,
    pub init_std: f64,
    pub sigma_floor: f64,
    pub weights: CostWeights,
    pub epsilon: f64,
    pub robot_radius: f64,
    /// Below this mean distance no safe ellipsoid is built.
    pub min_separation: f64,
    pub mode: ConstraintMode,
    pub execution: Execution,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 40,
            dt: 0.1,
            u_max: 2.0,
            iterations: 5,
            samples: 400,
            elites: 40,
            init_std: 1.0,
            sigma_floor: 1e-3,
            weights: CostWeights::default(),
            epsilon: 0.1,
            robot_radius: 0.4,
            min_separation: 0.401,
            mode: ConstraintMode::DistributionallyRobust,
            execution: Execution::Parallel,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::InvalidConfig(m.into()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if !(self.dt > 0.0 && self.u_max > 0.0 && self.init_std > 0.0 && self.sigma_floor > 0.0) {
            return bad("dt, u_max, init_std and sigma_floor must be positive");
        }
        if self.iterations == 0 || self.elites == 0 || self.elites > self.samples {
            return bad("need iterations >= 1 and 1 <= elites <= samples");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if !(self.weights.discount > 0.0 && self.weights.discount <= 1.0) {
            return bad("discount must lie in (0, 1]");
        }
        if !(self.robot_radius > 0.0 && self.min_separation > self.robot_radius) {
            return bad("need 0 < robot_radius < min_separation");
        }
        Ok(())
    }
}

/// Everything needed to score a sequence from one planning state.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub x0: Vec2,
    pub goal: Vec2,
    /// One field per constrained pedestrian, each covering at least `horizon` steps.
    pub fields: &'a [MomentField],
    pub config: &'a PlannerConfig,
}

impl Problem<'_> {
    fn check(&self) -> Result<(), PlanError> {
        let horizon = self.config.horizon;
        for f in self.fields {
            if f.steps.len() < horizon {
                return Err(PlanError::ShortMomentField {
                    ped_id: f.ped_id,
                    len: f.steps.len(),
                    horizon,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Objective, including the soft penalty in penalty mode.
    pub cost: f64,
    pub report: RiskReport,
    /// Whether elite selection treats the sequence as feasible.
    pub admissible: bool,
}

fn evaluate_unchecked(problem: &Problem<'_>, seq: &ControlSequence) -> Result<Evaluation, PlanError> {
    let cfg = problem.config;
    if seq.len() != cfg.horizon {
        return Err(PlanError::SequenceLength { got: seq.len(), horizon: cfg.horizon });
    }
    let positions = rollout(problem.x0, seq, cfg.dt);
    let mut cost = trajectory_cost(&positions, seq, problem.goal, &cfg.weights);

    let mut per_step_g = Vec::with_capacity(cfg.horizon);
    let mut worst_ped = Vec::with_capacity(cfg.horizon);
    let mut penalty = 0.0;
    for (k, x) in positions[1..].iter().enumerate() {
        let mut worst: Option<(u64, f64)> = None;
        let mut step_penalty = 0.0;
        for field in problem.fields {
            let m = &field.steps[k];
            let ell = build_safe_ellipsoid(m.mu, *x, cfg.robot_radius, cfg.min_separation)?;
            let g = dr_cvar_bound(&ell, &m.sigma, cfg.epsilon)?;
            if worst.is_none_or(|(_, w)| g > w) {
                worst = Some((field.ped_id, g));
            }
            if let ConstraintMode::SoftPenalty { radius, .. } = cfg.mode {
                let gap = (radius - (x - m.mu).norm()).max(0.0);
                step_penalty += gap * gap;
            }
        }
        per_step_g.push(worst.map_or(EMPTY_STEP_CONSTRAINT, |(_, g)| g));
        worst_ped.push(worst.map(|(id, _)| id));
        penalty += cfg.weights.discount.powi(k as i32 + 1) * step_penalty;
    }
    let report = RiskReport::new(per_step_g, worst_ped, cfg.weights.discount);
    let admissible = match cfg.mode {
        ConstraintMode::DistributionallyRobust => report.feasible,
        ConstraintMode::SoftPenalty { weight, .. } => {
            cost += weight * penalty;
            true
        }
    };
    Ok(Evaluation { cost, report, admissible })
}

/// Rolls out and scores one sequence.
pub fn evaluate(problem: &Problem<'_>, seq: &ControlSequence) -> Result<Evaluation, PlanError> {
    problem.check()?;
    evaluate_unchecked(problem, seq)
}

/// Scores every sequence. Results are in input order and identical to
/// calling [`evaluate`] on each, whatever the execution mode.
pub fn evaluate_batch(
    problem: &Problem<'_>,
    sequences: &[ControlSequence],
    execution: Execution,
) -> Result<Vec<Evaluation>, PlanError> {
    problem.check()?;
    execution.map(sequences, |s| evaluate_unchecked(problem, s)).into_iter().collect()
}

/// Indices of the elite set, best first. Admissible sequences by ascending
/// cost come first; if there are fewer than `n_elite` of them the rest are
/// filled with inadmissible sequences by ascending Risk Score.
pub fn select_elites(evaluations: &[Evaluation], n_elite: usize) -> Vec<usize> {
    let (mut admissible, mut rest): (Vec<usize>, Vec<usize>) =
        (0..evaluations.len()).partition(|&i| evaluations[i].admissible);
    admissible.sort_by(|&a, &b| evaluations[a].cost.total_cmp(&evaluations[b].cost));
    if admissible.len() >= n_elite {
        admissible.truncate(n_elite);
        return admissible;
    }
    rest.sort_by(|&a, &b| {
        evaluations[a].report.risk_score.total_cmp(&evaluations[b].report.risk_score)
    });
    let missing = n_elite - admissible.len();
    admissible.extend(rest.into_iter().take(missing));
    admissible
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub feasible_count: usize,
    pub elite_feasible_count: usize,
    /// Cheapest feasible sequence this iteration.
    pub best_cost: Option<f64>,
    pub best_risk_score: f64,
    /// Cheapest feasible sequence over all iterations so far.
    pub best_feasible_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    /// First control of the chosen sequence.
    pub control: Vec2,
    pub sequence: ControlSequence,
    pub evaluation: Evaluation,
    pub diagnostics: Vec<IterationDiagnostics>,
}

/// Receding-horizon CEM planner. Keeps the previous solution as a warm start.
#[derive(Debug, Clone)]
pub struct Planner {
    config: PlannerConfig,
    warm_start: Option<Vec<Vec2>>,
}

impl Planner {
    pub fn new(config: PlannerConfig) -> Result<Self, PlanError> {
        config.validate()?;
        Ok(Self { config, warm_start: None })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    /// Forget the warm start.
    pub fn reset(&mut self) {
        self.warm_start = None;
    }

    /// Straight line toward the goal, scaled into the input box, stopping at the goal.
    pub fn straight_line(&self, x0: Vec2, goal: Vec2) -> Vec<Vec2> {
        let cfg = &self.config;
        let mut p = x0;
        (0..cfg.horizon)
            .map(|_| {
                let mut v = (goal - p) / cfg.dt;
                let peak = v.amax();
                if peak > cfg.u_max {
                    v *= cfg.u_max / peak;
                }
                p += v * cfg.dt;
                v
            })
            .collect()
    }

    fn initial_mean(&self, x0: Vec2, goal: Vec2) -> Vec<Vec2> {
        match &self.warm_start {
            Some(prev) => {
                let mut shifted: Vec<Vec2> = prev[1..].to_vec();
                shifted.push(prev[prev.len() - 1]);
                shifted
            }
            None => self.straight_line(x0, goal),
        }
    }

    pub fn plan<R: Rng + ?Sized>(
        &mut self,
        x0: Vec2,
        goal: Vec2,
        fields: &[MomentField],
        rng: &mut R,
    ) -> Result<PlanOutcome, PlanError> {
        let cfg = self.config.clone();
        let problem = Problem { x0, goal, fields, config: &cfg };
        problem.check()?;

        let k = cfg.horizon;
        let mut mean = self.initial_mean(x0, goal);
        let mut std = vec![Vec2::repeat(cfg.init_std); k];
        let mut best_feasible: Option<(ControlSequence, Evaluation)> = None;
        let mut diagnostics = Vec::with_capacity(cfg.iterations);
        let mut last: Option<(ControlSequence, Evaluation)> = None;

        for iteration in 0..cfg.iterations {
            let sequences: Vec<ControlSequence> = (0..cfg.samples)
                .map(|_| {
                    ControlSequence::new(
                        mean.iter()
                            .zip(&std)
                            .map(|(m, s)| {
                                let z = Vec2::new(
                                    StandardNormal.sample(rng),
                                    StandardNormal.sample(rng),
                                );
                                (m + s.component_mul(&z)).map(|c| c.clamp(-cfg.u_max, cfg.u_max))
                            })
                            .collect(),
                    )
                })
                .collect();
            let evals = evaluate_batch(&problem, &sequences, cfg.execution)?;
            let elites = select_elites(&evals, cfg.elites);

            let feasible_count = evals.iter().filter(|e| e.admissible).count();
            let best_cost = evals
                .iter()
                .filter(|e| e.admissible)
                .map(|e| e.cost)
                .min_by(f64::total_cmp);
            let best_risk_score = evals
                .iter()
                .map(|e| e.report.risk_score)
                .min_by(f64::total_cmp)
                .unwrap_or(f64::INFINITY);
            let top = elites[0];
            if evals[top].admissible
                && best_feasible.as_ref().is_none_or(|(_, e)| evals[top].cost < e.cost)
            {
                best_feasible = Some((sequences[top].clone(), evals[top].clone()));
            }
            diagnostics.push(IterationDiagnostics {
                iteration,
                feasible_count,
                elite_feasible_count: elites.iter().filter(|&&i| evals[i].admissible).count(),
                best_cost,
                best_risk_score,
                best_feasible_cost: best_feasible.as_ref().map(|(_, e)| e.cost),
            });

            let n = elites.len() as f64;
            for step in 0..k {
                let m = elites.iter().map(|&i| sequences[i].controls[step]).sum::<Vec2>() / n;
                let var = elites
                    .iter()
                    .map(|&i| (sequences[i].controls[step] - m).map(|d| d * d))
                    .sum::<Vec2>()
                    / n;
                mean[step] = m;
                std[step] = var.map(|v| v.sqrt().max(cfg.sigma_floor));
            }
            last = Some((sequences[top].clone(), evals[top].clone()));
        }

        let (sequence, evaluation) = match (last, best_feasible) {
            (Some((s, e)), _) if e.admissible => (s, e),
            (_, Some(best)) => best,
            (Some(last), None) => last,
            (None, None) => unreachable!("iterations >= 1"),
        };
        self.warm_start = Some(sequence.controls.clone());
        Ok(PlanOutcome { control: sequence.controls[0], sequence, evaluation, diagnostics })
    }
}
