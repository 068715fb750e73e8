//! Monte Carlo forecasts of pedestrian motion.
//!
//! Any predictor plugs into the controller through [`Forecaster`]: given a
//! pedestrian's history it returns `M` sampled future paths on a fixed
//! forecast clock. The samplers here are stand-ins for a learned model.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::RngCore;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::scenario::PedestrianTrack;
use crate::Vec2;

#[derive(Debug, Error, PartialEq)]
pub enum ForecastError {
    #[error("pedestrian {ped_id}: need at least 2 history points, got {len}")]
    HistoryTooShort { ped_id: u64, len: usize },
    #[error("invalid forecast parameter: {0}")]
    InvalidParameter(String),
    #[error("goal mixture needs at least one goal")]
    EmptyGoals,
    #[error("non-finite value in forecast")]
    NonFinite,
}

/// Forecast clock and ensemble size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastWindow {
    pub t0: f64,
    pub dt_forecast: f64,
    /// H, number of forecast steps after `t0`.
    pub steps: usize,
    /// M, number of sample paths.
    pub samples: usize,
}

impl ForecastWindow {
    fn validate(&self) -> Result<(), ForecastError> {
        if self.samples < 2 {
            return Err(ForecastError::InvalidParameter(format!(
                "need at least 2 samples, got {}",
                self.samples
            )));
        }
        if self.steps < 1 {
            return Err(ForecastError::InvalidParameter("need at least 1 forecast step".into()));
        }
        if !(self.dt_forecast > 0.0 && self.dt_forecast.is_finite() && self.t0.is_finite()) {
            return Err(ForecastError::InvalidParameter("bad forecast clock".into()));
        }
        Ok(())
    }
}

/// `M x H` sampled future positions of one pedestrian. Step `h` (1-based) is
/// at time `t0 + h * dt_forecast`; `origin` is the observed position at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEnsemble {
    pub ped_id: u64,
    pub t0: f64,
    pub dt_forecast: f64,
    pub origin: Vec2,
    samples: usize,
    steps: usize,
    positions: Vec<Vec2>,
}

impl ForecastEnsemble {
    /// `positions` is row-major: sample path `m` occupies `[m*steps, (m+1)*steps)`.
    pub fn new(
        ped_id: u64,
        origin: Vec2,
        window: ForecastWindow,
        positions: Vec<Vec2>,
    ) -> Result<Self, ForecastError> {
        window.validate()?;
        if positions.len() != window.samples * window.steps {
            return Err(ForecastError::InvalidParameter(format!(
                "expected {} positions, got {}",
                window.samples * window.steps,
                positions.len()
            )));
        }
        if !origin.iter().chain(positions.iter().flat_map(|p| p.iter())).all(|v| v.is_finite()) {
            return Err(ForecastError::NonFinite);
        }
        Ok(Self {
            ped_id,
            t0: window.t0,
            dt_forecast: window.dt_forecast,
            origin,
            samples: window.samples,
            steps: window.steps,
            positions,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn path(&self, m: usize) -> &[Vec2] {
        &self.positions[m * self.steps..(m + 1) * self.steps]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[Vec2]> {
        self.positions.chunks(self.steps)
    }
}

/// What a forecaster sees about one pedestrian at planning time.
#[derive(Debug, Clone, Copy)]
pub struct ForecastRequest<'a> {
    pub track: &'a PedestrianTrack,
    /// Observed positions spaced `dt_forecast` apart, oldest first, ending at `t0`.
    pub history: &'a [Vec2],
    pub window: ForecastWindow,
}

pub trait Forecaster: Send + Sync {
    fn name(&self) -> &'static str;

    fn forecast(
        &self,
        request: &ForecastRequest<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<ForecastEnsemble, ForecastError>;
}

fn check_noise(noise_std: f64) -> Result<(), ForecastError> {
    if noise_std >= 0.0 && noise_std.is_finite() {
        Ok(())
    } else {
        Err(ForecastError::InvalidParameter(format!("noise_std must be >= 0, got {noise_std}")))
    }
}

fn gaussian2(rng: &mut dyn RngCore, std: f64) -> Vec2 {
    let x: f64 = StandardNormal.sample(rng);
    let y: f64 = StandardNormal.sample(rng);
    Vec2::new(x, y) * std
}

/// Last position and finite-difference velocity from the history.
fn current_motion(
    ped_id: u64,
    history: &[Vec2],
    dt_forecast: f64,
) -> Result<(Vec2, Vec2), ForecastError> {
    let n = history.len();
    if n < 2 {
        return Err(ForecastError::HistoryTooShort { ped_id, len: n });
    }
    let p0 = history[n - 1];
    Ok((p0, (p0 - history[n - 2]) / dt_forecast))
}

/// Straight-line extrapolation plus random-walk noise: step `h` has per-axis
/// noise std `noise_std * sqrt(h)`.
pub fn constant_velocity(
    ped_id: u64,
    history: &[Vec2],
    window: ForecastWindow,
    noise_std: f64,
    rng: &mut dyn RngCore,
) -> Result<ForecastEnsemble, ForecastError> {
    window.validate()?;
    check_noise(noise_std)?;
    let (p0, v) = current_motion(ped_id, history, window.dt_forecast)?;
    let mut positions = Vec::with_capacity(window.samples * window.steps);
    for _ in 0..window.samples {
        let mut walk = Vec2::zeros();
        for h in 1..=window.steps {
            if noise_std > 0.0 {
                walk += gaussian2(rng, noise_std);
            }
            positions.push(p0 + v * (h as f64 * window.dt_forecast) + walk);
        }
    }
    ForecastEnsemble::new(ped_id, p0, window, positions)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedGoal {
    pub position: Vec2,
    pub weight: f64,
}

/// Multi-modal sampler: each path picks a goal by weight and walks toward it at
/// the pedestrian's current speed (stopping on arrival), plus random-walk noise.
/// Also returns the goal index chosen for each path.
pub fn goal_mixture_with_modes(
    ped_id: u64,
    history: &[Vec2],
    goals: &[WeightedGoal],
    window: ForecastWindow,
    noise_std: f64,
    rng: &mut dyn RngCore,
) -> Result<(ForecastEnsemble, Vec<usize>), ForecastError> {
    window.validate()?;
    check_noise(noise_std)?;
    if goals.is_empty() {
        return Err(ForecastError::EmptyGoals);
    }
    let total: f64 = goals.iter().map(|g| g.weight).sum();
    if goals.iter().any(|g| g.weight.is_nan() || g.weight <= 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(ForecastError::InvalidParameter(
            "goal weights must be positive and sum to 1".into(),
        ));
    }
    let (p0, v) = current_motion(ped_id, history, window.dt_forecast)?;
    let stride = v.norm() * window.dt_forecast;
    let picker = WeightedIndex::new(goals.iter().map(|g| g.weight))
        .map_err(|e| ForecastError::InvalidParameter(e.to_string()))?;

    let mut positions = Vec::with_capacity(window.samples * window.steps);
    let mut modes = Vec::with_capacity(window.samples);
    for _ in 0..window.samples {
        let mode = picker.sample(rng);
        modes.push(mode);
        let goal = goals[mode].position;
        let mut nominal = p0;
        let mut walk = Vec2::zeros();
        for _ in 0..window.steps {
            let to_goal = goal - nominal;
            let dist = to_goal.norm();
            if dist <= stride {
                nominal = goal;
            } else if dist > 0.0 {
                nominal += to_goal * (stride / dist);
            }
            if noise_std > 0.0 {
                walk += gaussian2(rng, noise_std);
            }
            positions.push(nominal + walk);
        }
    }
    Ok((ForecastEnsemble::new(ped_id, p0, window, positions)?, modes))
}

pub fn goal_mixture(
    ped_id: u64,
    history: &[Vec2],
    goals: &[WeightedGoal],
    window: ForecastWindow,
    noise_std: f64,
    rng: &mut dyn RngCore,
) -> Result<ForecastEnsemble, ForecastError> {
    goal_mixture_with_modes(ped_id, history, goals, window, noise_std, rng).map(|(e, _)| e)
}

/// Ground truth plus i.i.d. Gaussian noise per axis per step. Times outside the
/// recorded span clamp to the nearest recorded position.
pub fn replay_oracle(
    track: &PedestrianTrack,
    window: ForecastWindow,
    noise_std: f64,
    rng: &mut dyn RngCore,
) -> Result<ForecastEnsemble, ForecastError> {
    window.validate()?;
    check_noise(noise_std)?;
    let truth: Vec<Vec2> = (1..=window.steps)
        .map(|h| track.position_clamped(window.t0 + h as f64 * window.dt_forecast))
        .collect();
    let mut positions = Vec::with_capacity(window.samples * window.steps);
    for _ in 0..window.samples {
        for p in &truth {
            let noise = if noise_std > 0.0 { gaussian2(rng, noise_std) } else { Vec2::zeros() };
            positions.push(p + noise);
        }
    }
    ForecastEnsemble::new(track.ped_id, track.position_clamped(window.t0), window, positions)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantVelocity {
    pub noise_std: f64,
}

impl Forecaster for ConstantVelocity {
    fn name(&self) -> &'static str {
        "constant_velocity"
    }

    fn forecast(
        &self,
        req: &ForecastRequest<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<ForecastEnsemble, ForecastError> {
        constant_velocity(req.track.ped_id, req.history, req.window, self.noise_std, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalMixture {
    pub goals: Vec<WeightedGoal>,
    pub noise_std: f64,
}

impl Forecaster for GoalMixture {
    fn name(&self) -> &'static str {
        "goal_mixture"
    }

    fn forecast(
        &self,
        req: &ForecastRequest<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<ForecastEnsemble, ForecastError> {
        goal_mixture(req.track.ped_id, req.history, &self.goals, req.window, self.noise_std, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOracle {
    pub noise_std: f64,
}

impl Forecaster for ReplayOracle {
    fn name(&self) -> &'static str {
        "replay_oracle"
    }

    fn forecast(
        &self,
        req: &ForecastRequest<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<ForecastEnsemble, ForecastError> {
        replay_oracle(req.track, req.window, self.noise_std, rng)
    }
}
