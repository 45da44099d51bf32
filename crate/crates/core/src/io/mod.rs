//! Serialization of sensor logs, calibration, scenarios, trajectories and
//! point clouds, plus association of sensor streams to estimator states.

mod associate;
mod calibration;
mod log;
mod ply;
mod trajectory;

pub use associate::{
    associate, Association, AssociationReport, DvlBinding, ImuBatchSample, StateBundle,
    DEFAULT_TOLERANCE_NS,
};
pub use calibration::{
    load_calibration, orthonormalize, save_calibration, CalibrationDoc, CalibrationFile,
    CameraDoc, ExtrinsicDoc, MAX_ROTATION_DRIFT, ROTATION_DRIFT_TOLERANCE,
};
pub use log::{
    read_log, sort_records, write_log, write_log_to_vec, LogRecord, Observation, Payload,
    LOG_FORMAT, LOG_VERSION,
};
pub use ply::{export_ply, import_ply};
pub use trajectory::{format_timestamp, parse_timestamp, read_trajectory, write_trajectory, TrajectoryEntry};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("timestamps not increasing: {previous} ns then {next} ns")]
    NonMonotonicTimestamps { previous: i64, next: i64 },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{what}: rotation is not orthonormal (drift {drift:.3e})")]
    NonOrthonormalRotation { what: String, drift: f64 },
    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },
    #[error("serialization failed: {0}")]
    Serialize(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
