//! Closed-loop episodes: replay pedestrians, forecast, plan, step the robot,
//! and score the run.
//!
//! Pedestrians are open-loop replays and never react to the robot. Forecasts
//! and moment fields are refreshed every `dt_forecast`; between refreshes the
//! planner reads the same fields shifted by the elapsed controller steps.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::cem::{IterationDiagnostics, PlanError, Planner};
use crate::forecast::{ForecastRequest, ForecastWindow, Forecaster};
use crate::moments::{moment_field, required_forecast_steps, MomentField};
use crate::scenario::{pedestrians_at, ConfigError, ControllerKind, PedestrianTrack, ScenarioConfig};
use crate::seed::rng_for;
use crate::{Execution, Vec2};

const JITTER_STREAM: u64 = 1;
const PLANNER_STREAM: u64 = 2;
const FORECAST_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub position: Vec2,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    /// Seconds spent in collision per 10 s of episode.
    pub collision_norm: f64,
    pub collision_steps: usize,
    /// Entries into the in-collision state.
    pub collision_events: usize,
    /// Closest human-robot distance; infinite when nobody was ever present
    /// (serialized as null).
    pub min_distance: f64,
    pub success: bool,
    pub reached_goal: bool,
    /// `sum_k |x_k - goal|^2 dt`.
    pub positional_cost: f64,
    pub episode_length: f64,
    pub steps: usize,
    pub initial_collision: bool,
    /// Forecast + planning wall time per step. Not reproducible; kept out of logs.
    #[serde(skip)]
    pub mean_step_wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PedestrianObservation {
    pub id: u64,
    pub position: [f64; 2],
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentDump {
    pub ped_id: u64,
    pub mu: Vec<[f64; 2]>,
    /// Row-major 2x2 covariances.
    pub sigma: Vec<[f64; 4]>,
}

/// One line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub robot: [f64; 2],
    /// Applied control; absent on the terminal record.
    pub control: Option<[f64; 2]>,
    pub pedestrians: Vec<PedestrianObservation>,
    pub in_collision: bool,
    pub epsilon: f64,
    pub forecast_refreshed: bool,
    /// Pedestrians whose constraints entered this plan.
    pub constrained: Vec<u64>,
    pub feasible: Option<bool>,
    pub risk_score: Option<f64>,
    pub cem: Vec<IterationDiagnostics>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moments: Option<Vec<MomentDump>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpisodeOptions {
    /// Dump moment fields into the log at each refresh.
    pub verbose: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub start: Vec2,
    pub goal: Vec2,
    pub metrics: MetricsRecord,
    pub log: Vec<StepRecord>,
}

impl Episode {
    /// The trajectory log, one JSON object per line.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.log {
            out.push_str(&serde_json::to_string(rec).expect("log records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn trajectory(&self) -> Vec<RobotState> {
        self.log
            .iter()
            .map(|r| RobotState { position: Vec2::new(r.robot[0], r.robot[1]), time: r.t })
            .collect()
    }
}

fn jitter(rng: &mut crate::seed::SimRng, amount: f64) -> Vec2 {
    use rand::Rng;
    if amount > 0.0 {
        Vec2::new(rng.random_range(-amount..=amount), rng.random_range(-amount..=amount))
    } else {
        Vec2::zeros()
    }
}

struct Refresh {
    fields: Vec<MomentField>,
    warnings: Vec<String>,
    dump: Option<Vec<MomentDump>>,
}

fn refresh_fields(
    config: &ScenarioConfig,
    tracks: &[PedestrianTrack],
    forecaster: &dyn Forecaster,
    t: f64,
    step: usize,
    field_len: usize,
    verbose: bool,
) -> Refresh {
    let present: Vec<&PedestrianTrack> = tracks.iter().filter(|tr| tr.covers(t)).collect();
    let window = ForecastWindow {
        t0: t,
        dt_forecast: config.dt_forecast,
        steps: required_forecast_steps(field_len, config.steps_per_forecast()),
        samples: config.num_forecast_samples,
    };
    let results = config.execution.map(&present, |track| {
        let history = track.history(t, config.dt_forecast, config.history_length);
        let request = ForecastRequest { track, history: &history, window };
        let mut rng = rng_for(config.seed, &[FORECAST_STREAM, track.ped_id, step as u64]);
        forecaster
            .forecast(&request, &mut rng)
            .map_err(|e| e.to_string())
            .and_then(|ens| {
                moment_field(&ens, config.dt, field_len, config.delta_reg).map_err(|e| e.to_string())
            })
            .map_err(|e| format!("pedestrian {} skipped this cycle: {e}", track.ped_id))
    });
    let mut fields = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    for r in results {
        match r {
            Ok(f) => fields.push(f),
            Err(w) => {
                log::warn!("{w}");
                warnings.push(w);
            }
        }
    }
    let dump = verbose.then(|| {
        fields
            .iter()
            .map(|f| MomentDump {
                ped_id: f.ped_id,
                mu: f.steps.iter().map(|s| [s.mu.x, s.mu.y]).collect(),
                sigma: f
                    .steps
                    .iter()
                    .map(|s| [s.sigma[(0, 0)], s.sigma[(0, 1)], s.sigma[(1, 0)], s.sigma[(1, 1)]])
                    .collect(),
            })
            .collect()
    });
    Refresh { fields, warnings, dump }
}

/// Runs one closed-loop episode. Ends when the robot is within
/// `goal_tolerance` of the goal, when `episode_duration` elapses, or when every
/// pedestrian track has ended.
pub fn run_episode(
    config: &ScenarioConfig,
    tracks: &[PedestrianTrack],
    forecaster: &dyn Forecaster,
    options: EpisodeOptions,
) -> Result<Episode, SimError> {
    config.validate()?;
    let ratio = config.steps_per_forecast();
    let horizon = config.horizon;
    let field_len = horizon + ratio - 1;
    let r = config.robot_radius;

    let mut jitter_rng = rng_for(config.seed, &[JITTER_STREAM]);
    let start = config.start() + jitter(&mut jitter_rng, config.start_jitter);
    let goal = config.goal() + jitter(&mut jitter_rng, config.goal_jitter);

    let mut planner = match config.controller {
        ControllerKind::Idle => None,
        _ => Some(Planner::new(config.planner_config())?),
    };
    let mut plan_rng = rng_for(config.seed, &[PLANNER_STREAM]);
    let max_steps = (config.episode_duration / config.dt).round() as usize;
    let last_track_end = tracks.iter().map(|t| t.end_time()).fold(f64::NEG_INFINITY, f64::max);

    let mut x = start;
    let mut fields: Vec<MomentField> = Vec::new();
    let mut log = Vec::with_capacity(max_steps);
    let (mut collision_steps, mut collision_events) = (0usize, 0usize);
    let mut was_colliding = false;
    let mut initial_collision = false;
    let mut min_distance = f64::INFINITY;
    let mut positional_cost = 0.0;
    let mut reached_goal = false;
    let mut wall_ms = 0.0;
    let mut planned_steps = 0usize;

    for step in 0..max_steps {
        let t = config.start_time + step as f64 * config.dt;
        let observations: Vec<PedestrianObservation> = pedestrians_at(tracks, t)
            .into_iter()
            .map(|(id, p)| PedestrianObservation {
                id,
                position: [p.x, p.y],
                distance: (p - x).norm(),
            })
            .collect();
        let in_collision = observations.iter().any(|o| o.distance < r);
        if let Some(d) = observations.iter().map(|o| o.distance).min_by(f64::total_cmp) {
            min_distance = min_distance.min(d);
        }
        if step == 0 {
            initial_collision = in_collision;
        }
        if in_collision {
            collision_steps += 1;
            if !was_colliding {
                collision_events += 1;
            }
        }
        was_colliding = in_collision;
        positional_cost += (x - goal).norm_squared() * config.dt;

        let mut record = StepRecord {
            step,
            t,
            robot: [x.x, x.y],
            control: None,
            pedestrians: observations,
            in_collision,
            epsilon: config.epsilon,
            forecast_refreshed: false,
            constrained: Vec::new(),
            feasible: None,
            risk_score: None,
            cem: Vec::new(),
            warnings: Vec::new(),
            moments: None,
        };

        reached_goal = (x - goal).norm() < config.goal_tolerance;
        let exhausted = !tracks.is_empty() && t > last_track_end;
        if reached_goal || exhausted {
            log.push(record);
            break;
        }

        let clock = Instant::now();
        let control = match planner.as_mut() {
            None => Vec2::zeros(),
            Some(planner) => {
                if step % ratio == 0 {
                    let refresh =
                        refresh_fields(config, tracks, forecaster, t, step, field_len, options.verbose);
                    fields = refresh.fields;
                    record.forecast_refreshed = true;
                    record.warnings = refresh.warnings;
                    record.moments = refresh.dump;
                }
                let offset = step % ratio;
                let active: Vec<MomentField> =
                    fields.iter().filter_map(|f| f.window(offset, horizon)).collect();
                let outcome = planner.plan(x, goal, &active, &mut plan_rng)?;
                record.constrained = active.iter().map(|f| f.ped_id).collect();
                record.feasible = Some(outcome.evaluation.report.feasible);
                record.risk_score = Some(outcome.evaluation.report.risk_score);
                record.cem = outcome.diagnostics;
                outcome.control
            }
        };
        wall_ms += clock.elapsed().as_secs_f64() * 1e3;
        planned_steps += 1;
        record.control = Some([control.x, control.y]);
        log.push(record);
        x += control * config.dt;
    }

    let steps = log.len();
    let episode_length = steps as f64 * config.dt;
    let collision_norm = if episode_length > 0.0 {
        collision_steps as f64 * config.dt / (episode_length / 10.0)
    } else {
        0.0
    };
    let metrics = MetricsRecord {
        collision_norm,
        collision_steps,
        collision_events,
        min_distance,
        success: reached_goal && collision_events == 0,
        reached_goal,
        positional_cost,
        episode_length,
        steps,
        initial_collision,
        mean_step_wall_time_ms: if planned_steps > 0 { wall_ms / planned_steps as f64 } else { 0.0 },
    };
    Ok(Episode { start, goal, metrics, log })
}

#[derive(Debug, Clone)]
pub struct EpisodeJob<'a> {
    pub id: String,
    pub config: ScenarioConfig,
    pub tracks: &'a [PedestrianTrack],
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub id: String,
    pub epsilon: f64,
    pub seed: u64,
    /// Error text for episodes that errored or panicked.
    pub result: Result<Episode, String>,
}

fn panic_text(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "episode panicked".to_string()
    }
}

/// Runs independent episodes. A failing or panicking episode is recorded and
/// the batch continues.
pub fn run_batch(
    jobs: &[EpisodeJob<'_>],
    execution: Execution,
    options: EpisodeOptions,
) -> Vec<EpisodeOutcome> {
    execution.map(jobs, |job| {
        let result = catch_unwind(AssertUnwindSafe(|| {
            let forecaster = job.config.build_forecaster();
            run_episode(&job.config, job.tracks, forecaster.as_ref(), options)
        }));
        let result = match result {
            Ok(Ok(ep)) => Ok(ep),
            Ok(Err(e)) => Err(e.to_string()),
            Err(payload) => Err(format!("panic: {}", panic_text(payload))),
        };
        EpisodeOutcome { id: job.id.clone(), epsilon: job.config.epsilon, seed: job.config.seed, result }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

/// Batch summary over completed episodes without an initial-state collision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub episodes: usize,
    pub included: usize,
    pub excluded_initial_collision: usize,
    pub failed: usize,
    pub collision_norm: Option<MeanStd>,
    pub collision_steps: Option<MeanStd>,
    pub min_distance: Option<MeanStd>,
    /// Percent of included episodes that succeeded.
    pub success_rate: Option<f64>,
    pub positional_cost: Option<MeanStd>,
    pub episode_length: Option<MeanStd>,
    #[serde(skip)]
    pub wall_time_ms: Option<MeanStd>,
}

pub fn aggregate(outcomes: &[EpisodeOutcome]) -> Aggregate {
    let completed: Vec<&MetricsRecord> =
        outcomes.iter().filter_map(|o| o.result.as_ref().ok()).map(|e| &e.metrics).collect();
    let included: Vec<&MetricsRecord> =
        completed.iter().copied().filter(|m| !m.initial_collision).collect();
    let col = |f: fn(&MetricsRecord) -> f64| -> Vec<f64> { included.iter().map(|m| f(m)).collect() };
    let min_d: Vec<f64> =
        included.iter().map(|m| m.min_distance).filter(|d| d.is_finite()).collect();
    Aggregate {
        episodes: outcomes.len(),
        included: included.len(),
        excluded_initial_collision: completed.len() - included.len(),
        failed: outcomes.len() - completed.len(),
        collision_norm: MeanStd::of(&col(|m| m.collision_norm)),
        collision_steps: MeanStd::of(&col(|m| m.collision_steps as f64)),
        min_distance: MeanStd::of(&min_d),
        success_rate: (!included.is_empty()).then(|| {
            100.0 * included.iter().filter(|m| m.success).count() as f64 / included.len() as f64
        }),
        positional_cost: MeanStd::of(&col(|m| m.positional_cost)),
        episode_length: MeanStd::of(&col(|m| m.episode_length)),
        wall_time_ms: MeanStd::of(&col(|m| m.mean_step_wall_time_ms)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::ReplayOracle;

    fn robot_only() -> ScenarioConfig {
        ScenarioConfig {
            robot_start: [0.0, 0.0],
            robot_goal: [1.0, 0.0],
            horizon: 20,
            cem_samples: 100,
            cem_elites: 10,
            episode_duration: 10.0,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn robot_only_episode_succeeds() {
        let cfg = robot_only();
        let ep = run_episode(&cfg, &[], &ReplayOracle { noise_std: 0.0 }, EpisodeOptions::default())
            .unwrap();
        let m = &ep.metrics;
        assert!(m.success && m.reached_goal);
        assert_eq!(m.collision_norm, 0.0);
        assert_eq!(m.min_distance, f64::INFINITY);
        assert!(ep.log.last().unwrap().control.is_none());
        let json = ep.log_jsonl();
        assert_eq!(json.lines().count(), ep.log.len());
    }

    #[test]
    fn idle_robot_positional_cost() {
        let cfg = ScenarioConfig { controller: ControllerKind::Idle, ..robot_only() };
        let ep = run_episode(&cfg, &[], &ReplayOracle { noise_std: 0.0 }, EpisodeOptions::default())
            .unwrap();
        assert_eq!(ep.metrics.steps, 100);
        assert!((ep.metrics.positional_cost - 10.0).abs() < 1e-9);
        assert!(!ep.metrics.success);
        assert!((ep.metrics.episode_length - 10.0).abs() < 1e-9);
    }

    #[test]
    fn head_on_walker_hits_idle_robot() {
        let walker = PedestrianTrack::from_samples(
            7,
            2.5,
            &(0..=25).map(|f| {
                let t = f as f64 * 0.4;
                (t, Vec2::new(5.0 - t, 0.3))
            }).collect::<Vec<_>>(),
        );
        let cfg = ScenarioConfig { controller: ControllerKind::Idle, ..robot_only() };
        let ep = run_episode(&cfg, &[walker], &ReplayOracle { noise_std: 0.0 }, EpisodeOptions::default())
            .unwrap();
        assert!(ep.metrics.collision_events >= 1);
        assert!(ep.metrics.collision_steps >= ep.metrics.collision_events);
        assert!(!ep.metrics.success);
        assert!((ep.metrics.min_distance - 0.3).abs() < 1e-9);
        let expected = ep.metrics.collision_steps as f64 * 0.1 / (ep.metrics.episode_length / 10.0);
        assert_eq!(ep.metrics.collision_norm, expected);
    }

    #[test]
    fn aggregate_uses_population_std_and_excludes_initial_collisions() {
        let metrics = |steps: usize, initial: bool| MetricsRecord {
            collision_norm: steps as f64,
            collision_steps: steps,
            collision_events: steps.min(1),
            min_distance: 1.0,
            success: steps == 0,
            reached_goal: true,
            positional_cost: 1.0,
            episode_length: 10.0,
            steps: 100,
            initial_collision: initial,
            mean_step_wall_time_ms: 0.0,
        };
        let outcome = |m: MetricsRecord| EpisodeOutcome {
            id: String::new(),
            epsilon: 0.1,
            seed: 0,
            result: Ok(Episode { start: Vec2::zeros(), goal: Vec2::zeros(), metrics: m, log: vec![] }),
        };
        let outcomes = vec![
            outcome(metrics(0, false)),
            outcome(metrics(2, false)),
            outcome(metrics(50, true)),
            EpisodeOutcome { id: "x".into(), epsilon: 0.1, seed: 0, result: Err("boom".into()) },
        ];
        let agg = aggregate(&outcomes);
        assert_eq!(agg.collision_norm, Some(MeanStd { mean: 1.0, std: 1.0 }));
        assert_eq!((agg.included, agg.excluded_initial_collision, agg.failed), (2, 1, 1));
        assert_eq!(agg.success_rate, Some(50.0));
    }
}
