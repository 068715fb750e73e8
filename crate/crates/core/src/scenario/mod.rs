//! Pedestrian track ingestion, ground-truth replay, and scenario configuration.

mod config;
pub mod gauntlet;
mod tracks;

pub use config::{ConfigError, ControllerKind, ForecasterKind, ScenarioConfig, ENV_PREFIX};
pub use tracks::{
    parse_tracks, pedestrians_at, serialize_tracks, PedestrianTrack, TrackError, TrackSample,
};
