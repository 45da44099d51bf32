//! Deterministic survey simulation: smooth trajectories, landmark worlds,
//! noisy multi-sensor logs with visual blackouts, and the ground truth of
//! which emitted track ids belong to which landmark.

mod presets;
mod render;
mod synth;
mod trajectory;
mod world;

pub use presets::{preset, preset_names, Scenario, PRESET_NAMES};
pub use render::render_oracle_maps;
pub use synth::{
    frontend_init, reassociation_oracle, synthesize_log, Blackout, DegradationSchedule,
    ReassociationEvent, ReassociationRecord, SensorRates, SimNoise, SimOutput, DEFAULT_MAX_RANGE,
};
pub use trajectory::{generate_trajectory, true_imu, truth_at, Pattern, SurveySpec, TimedState};
pub use world::{build_world, Cluster, Landmark, Shape, World, WorldSpec};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid survey: {0}")]
    InvalidSpec(String),
    #[error("invalid rates: {0}")]
    InvalidRates(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

// Independent random streams, one per purpose, so that changing how much
// randomness one consumer draws never shifts another.
pub(crate) const STREAM_WORLD: u64 = 1;
pub(crate) const STREAM_IMU: u64 = 2;
pub(crate) const STREAM_BIAS: u64 = 3;
pub(crate) const STREAM_DVL: u64 = 4;
pub(crate) const STREAM_DEPTH: u64 = 5;
pub(crate) const STREAM_CAMERA: u64 = 6;
pub(crate) const STREAM_REASSOCIATION: u64 = 7;
pub(crate) const STREAM_JITTER: u64 = 8;
pub(crate) const STREAM_INIT: u64 = 9;
