use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cem::{ConstraintMode, CostWeights, PlannerConfig};
use crate::forecast::{ConstantVelocity, Forecaster, GoalMixture, ReplayOracle, WeightedGoal};
use crate::{Execution, Mat2, Vec2};

/// Environment variables `DRCC_<KEY>` override scenario keys (`DRCC_EPSILON=0.05`).
pub const ENV_PREFIX: &str = "DRCC_";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecasterKind {
    ConstantVelocity,
    GoalMixture,
    ReplayOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// CEM with the distributionally robust CVaR constraint.
    DrccCem,
    /// Same CEM, constraint off, soft distance penalty on predicted means.
    PenaltyCem,
    /// Zero control every step.
    Idle,
}

/// One scenario, read from a flat TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub robot_start: [f64; 2],
    #[serde(alias = "x_goal")]
    pub robot_goal: [f64; 2],
    pub epsilon: f64,
    #[serde(alias = "horizon_K")]
    pub horizon: usize,
    pub dt: f64,
    pub dt_forecast: f64,
    pub u_max: f64,
    #[serde(alias = "robot_radius_r")]
    pub robot_radius: f64,
    /// Extra separation beyond `robot_radius` below which no safe ellipsoid exists.
    pub min_separation_margin: f64,
    #[serde(alias = "num_forecast_samples_M")]
    pub num_forecast_samples: usize,
    pub cem_iterations: usize,
    pub cem_samples: usize,
    pub cem_elites: usize,
    /// Defaults to `0.5 * u_max`.
    pub cem_init_std: Option<f64>,
    pub cem_sigma_floor: f64,
    pub q: [[f64; 2]; 2],
    pub r: [[f64; 2]; 2],
    pub q_terminal: [[f64; 2]; 2],
    #[serde(alias = "discount_gamma")]
    pub discount: f64,
    pub terminal_goal_offset: bool,
    #[serde(alias = "rng_seed")]
    pub seed: u64,
    pub episode_duration: f64,
    /// Dataset time at which the episode starts.
    pub start_time: f64,
    pub frame_rate: f64,
    pub goal_tolerance: f64,
    pub delta_reg: f64,
    pub forecaster: ForecasterKind,
    pub forecast_noise_std: f64,
    pub history_length: usize,
    /// `[x, y, weight]` rows for the goal-mixture forecaster.
    pub mixture_goals: Vec<[f64; 3]>,
    pub controller: ControllerKind,
    pub penalty_weight: f64,
    pub penalty_radius: f64,
    /// Uniform per-axis perturbation of start and goal, drawn from the episode seed.
    pub start_jitter: f64,
    pub goal_jitter: f64,
    pub execution: Execution,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let half = [[0.5, 0.0], [0.0, 0.5]];
        Self {
            robot_start: [0.0, 0.0],
            robot_goal: [5.0, 0.0],
            epsilon: 0.1,
            horizon: 40,
            dt: 0.1,
            dt_forecast: 0.4,
            u_max: 2.0,
            robot_radius: 0.4,
            min_separation_margin: 1e-3,
            num_forecast_samples: 30,
            cem_iterations: 5,
            cem_samples: 400,
            cem_elites: 40,
            cem_init_std: None,
            cem_sigma_floor: 1e-3,
            q: half,
            r: [[0.05, 0.0], [0.0, 0.05]],
            q_terminal: half,
            discount: 0.99,
            terminal_goal_offset: false,
            seed: 0,
            episode_duration: 20.0,
            start_time: 0.0,
            frame_rate: 2.5,
            goal_tolerance: 0.2,
            delta_reg: 1e-6,
            forecaster: ForecasterKind::ConstantVelocity,
            forecast_noise_std: 0.1,
            history_length: 3,
            mixture_goals: Vec::new(),
            controller: ControllerKind::DrccCem,
            penalty_weight: 50.0,
            penalty_radius: 0.5,
            start_jitter: 0.0,
            goal_jitter: 0.0,
            execution: Execution::Parallel,
        }
    }
}

fn mat(m: [[f64; 2]; 2]) -> Mat2 {
    Mat2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

fn check_psd(key: &'static str, m: [[f64; 2]; 2]) -> Result<(), ConfigError> {
    let invalid = |reason: &str| ConfigError::Invalid { key, reason: reason.into() };
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite entry"));
    }
    let scale = m.iter().flatten().fold(1.0f64, |a, v| a.max(v.abs()));
    if (m[0][1] - m[1][0]).abs() > 1e-12 * scale {
        return Err(invalid("matrix is not symmetric"));
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if m[0][0] < 0.0 || m[1][1] < 0.0 || det < -1e-12 * scale * scale {
        return Err(invalid("matrix is not positive semidefinite"));
    }
    Ok(())
}

/// Parses an environment value as a TOML value, falling back to a bare string.
fn env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ScenarioConfig {
    /// Parses and validates a scenario document.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_str_with_overrides(text, std::iter::empty())
    }

    /// Parses a document, then applies `DRCC_<KEY>` overrides from `vars`
    /// (usually `std::env::vars()`), then validates.
    pub fn from_toml_str_with_overrides<I>(text: &str, vars: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (name, raw) in vars {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                table.insert(key.to_ascii_lowercase(), env_value(&raw));
            }
        }
        let config: ScenarioConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn fail<T>(key: &'static str, reason: impl Into<String>) -> Result<T, ConfigError> {
            Err(ConfigError::Invalid { key, reason: reason.into() })
        }
        let finite = |key: &'static str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                fail(key, "must be finite")
            }
        };
        for (key, v) in [
            ("robot_start", self.robot_start[0]),
            ("robot_start", self.robot_start[1]),
            ("robot_goal", self.robot_goal[0]),
            ("robot_goal", self.robot_goal[1]),
            ("start_time", self.start_time),
        ] {
            finite(key, v)?;
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return fail("epsilon", format!("must lie in (0, 1), got {}", self.epsilon));
        }
        if self.horizon < 1 {
            return fail("horizon", "must be at least 1");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail("dt", "must be positive");
        }
        if !(self.dt_forecast > 0.0 && self.dt_forecast.is_finite()) {
            return fail("dt_forecast", "must be positive");
        }
        let ratio = self.dt_forecast / self.dt;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return fail("dt_forecast", "must be an integer multiple of dt");
        }
        if !(self.u_max > 0.0 && self.u_max.is_finite()) {
            return fail("u_max", "must be positive");
        }
        if !(self.robot_radius > 0.0 && self.robot_radius.is_finite()) {
            return fail("robot_radius", "must be positive");
        }
        if !(self.min_separation_margin > 0.0 && self.min_separation_margin.is_finite()) {
            return fail("min_separation_margin", "must be positive");
        }
        if self.num_forecast_samples < 2 {
            return fail("num_forecast_samples", "must be at least 2");
        }
        if self.cem_iterations < 1 {
            return fail("cem_iterations", "must be at least 1");
        }
        if self.cem_elites < 1 || self.cem_elites > self.cem_samples {
            return fail("cem_elites", "must lie in 1..=cem_samples");
        }
        if let Some(s) = self.cem_init_std {
            if !(s > 0.0 && s.is_finite()) {
                return fail("cem_init_std", "must be positive");
            }
        }
        if !(self.cem_sigma_floor > 0.0 && self.cem_sigma_floor.is_finite()) {
            return fail("cem_sigma_floor", "must be positive");
        }
        check_psd("q", self.q)?;
        check_psd("r", self.r)?;
        check_psd("q_terminal", self.q_terminal)?;
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return fail("discount", "must lie in (0, 1]");
        }
        if !(self.episode_duration > 0.0 && self.episode_duration.is_finite()) {
            return fail("episode_duration", "must be positive");
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return fail("frame_rate", "must be positive");
        }
        if !(self.goal_tolerance > 0.0 && self.goal_tolerance.is_finite()) {
            return fail("goal_tolerance", "must be positive");
        }
        if !(self.delta_reg >= 0.0 && self.delta_reg.is_finite()) {
            return fail("delta_reg", "must be non-negative");
        }
        if !(self.forecast_noise_std >= 0.0 && self.forecast_noise_std.is_finite()) {
            return fail("forecast_noise_std", "must be non-negative");
        }
        if self.history_length < 2 {
            return fail("history_length", "must be at least 2");
        }
        if self.forecaster == ForecasterKind::GoalMixture {
            if self.mixture_goals.is_empty() {
                return fail("mixture_goals", "goal_mixture forecaster needs at least one goal");
            }
            let total: f64 = self.mixture_goals.iter().map(|g| g[2]).sum();
            if self.mixture_goals.iter().any(|g| g[2].is_nan() || g[2] <= 0.0) || (total - 1.0).abs() > 1e-9 {
                return fail("mixture_goals", "weights must be positive and sum to 1");
            }
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return fail("penalty_weight", "must be non-negative");
        }
        if !(self.penalty_radius >= 0.0 && self.penalty_radius.is_finite()) {
            return fail("penalty_radius", "must be non-negative");
        }
        if !(self.start_jitter >= 0.0 && self.goal_jitter >= 0.0) {
            return fail("start_jitter", "jitter must be non-negative");
        }
        Ok(())
    }

    /// Controller steps per forecast refresh.
    pub fn steps_per_forecast(&self) -> usize {
        (self.dt_forecast / self.dt).round() as usize
    }

    pub fn start(&self) -> Vec2 {
        Vec2::new(self.robot_start[0], self.robot_start[1])
    }

    pub fn goal(&self) -> Vec2 {
        Vec2::new(self.robot_goal[0], self.robot_goal[1])
    }

    pub fn cost_weights(&self) -> CostWeights {
        CostWeights {
            q: mat(self.q),
            r: mat(self.r),
            q_terminal: mat(self.q_terminal),
            discount: self.discount,
            terminal_goal_offset: self.terminal_goal_offset,
        }
    }

    pub fn planner_config(&self) -> PlannerConfig {
        let mode = match self.controller {
            ControllerKind::PenaltyCem => ConstraintMode::SoftPenalty {
                weight: self.penalty_weight,
                radius: self.penalty_radius,
            },
            _ => ConstraintMode::DistributionallyRobust,
        };
        PlannerConfig {
            horizon: self.horizon,
            dt: self.dt,
            u_max: self.u_max,
            iterations: self.cem_iterations,
            samples: self.cem_samples,
            elites: self.cem_elites,
            init_std: self.cem_init_std.unwrap_or(0.5 * self.u_max),
            sigma_floor: self.cem_sigma_floor,
            weights: self.cost_weights(),
            epsilon: self.epsilon,
            robot_radius: self.robot_radius,
            min_separation: self.robot_radius + self.min_separation_margin,
            mode,
            execution: self.execution,
        }
    }

    pub fn build_forecaster(&self) -> Box<dyn Forecaster> {
        let noise_std = self.forecast_noise_std;
        match self.forecaster {
            ForecasterKind::ConstantVelocity => Box::new(ConstantVelocity { noise_std }),
            ForecasterKind::ReplayOracle => Box::new(ReplayOracle { noise_std }),
            ForecasterKind::GoalMixture => Box::new(GoalMixture {
                goals: self
                    .mixture_goals
                    .iter()
                    .map(|g| WeightedGoal { position: Vec2::new(g[0], g[1]), weight: g[2] })
                    .collect(),
                noise_std,
            }),
        }
    }
}
