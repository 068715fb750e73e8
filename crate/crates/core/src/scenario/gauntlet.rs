//! Scripted crossing scenario: pedestrians cut across the straight line from
//! start to goal at the moments a greedy robot would arrive there.

use super::{ForecasterKind, PedestrianTrack, ScenarioConfig};
use crate::Vec2;

/// (id, point where the walker crosses the robot's line, world time of crossing, velocity)
const WALKERS: [(u64, [f64; 2], f64, [f64; 2]); 6] = [
    (1, [2.0, 0.0], 3.0, [0.0, -1.2]),
    (2, [3.5, 0.0], 3.8, [0.0, 1.1]),
    (3, [5.0, 0.0], 4.5, [0.0, -1.3]),
    (4, [4.0, 0.25], 4.0, [-1.0, 0.0]),
    (5, [6.5, 0.0], 5.3, [0.0, 1.2]),
    (6, [7.5, 0.0], 6.5, [-0.3, -1.0]),
];

pub const FRAME_RATE: f64 = 2.5;
const FRAMES: u64 = 50;

pub fn tracks() -> Vec<PedestrianTrack> {
    WALKERS
        .iter()
        .map(|&(id, cross, t_cross, v)| {
            let samples: Vec<(f64, Vec2)> = (0..=FRAMES)
                .map(|f| {
                    let t = f as f64 / FRAME_RATE;
                    (t, Vec2::new(cross[0] + v[0] * (t - t_cross), cross[1] + v[1] * (t - t_cross)))
                })
                .collect();
            PedestrianTrack::from_samples(id, FRAME_RATE, &samples)
        })
        .collect()
}

pub fn config() -> ScenarioConfig {
    ScenarioConfig {
        robot_start: [0.0, 0.0],
        robot_goal: [8.0, 0.0],
        start_time: 2.0,
        episode_duration: 12.0,
        frame_rate: FRAME_RATE,
        forecaster: ForecasterKind::ReplayOracle,
        forecast_noise_std: 0.1,
        ..ScenarioConfig::default()
    }
}
