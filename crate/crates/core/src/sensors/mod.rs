//! Inertial, DVL and pressure-depth measurement models.
//!
//! World frame is north-east-down with gravity `(0, 0, +9.81)`; the body
//! frame is forward-right-down. Accelerometers report specific force
//! `f = Rᵀ(a − g)`.

mod imu;
mod nav;
mod velocity;

pub use imu::{
    bias_walk_residual, imu_residual, imu_residual_jacobians, predict, preintegrate, Matrix9,
    Matrix9x6, PreintegratedImu, Vector9, MAX_NOMINAL_INTERVAL_NS,
};
pub use nav::{NavState, NAV_DIM, TAN_BA, TAN_BG, TAN_POS, TAN_ROT, TAN_VEL};
pub use velocity::{depth_jacobian, depth_residual, dvl_jacobians, dvl_residual, DvlJacobians};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

pub const GRAVITY: Vec3 = Vec3::new(0.0, 0.0, 9.81);

pub const DEFAULT_DVL_SIGMA: f64 = 0.02;
pub const DEFAULT_DEPTH_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SensorError {
    #[error("empty IMU batch")]
    EmptyBatch,
    #[error("IMU timestamps not increasing: {previous} ns then {next} ns")]
    NonMonotonicTimestamps { previous: i64, next: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// Nanoseconds.
    pub t: i64,
    /// rad/s, body frame.
    pub gyro: Vec3,
    /// Specific force in m/s², body frame.
    pub accel: Vec3,
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.gyro.iter().chain(self.accel.iter()).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvlSample {
    pub t: i64,
    /// m/s in the DVL frame.
    pub velocity_body: Vec3,
    pub valid: [bool; 3],
}

impl DvlSample {
    pub fn is_finite(&self) -> bool {
        (0..3).all(|i| !self.valid[i] || self.velocity_body[i].is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthSample {
    pub t: i64,
    /// Meters, positive down.
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImuBias {
    pub gyro: Vec3,
    pub accel: Vec3,
}

impl ImuBias {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        self.gyro.iter().chain(self.accel.iter()).all(|x| x.is_finite())
    }
}

/// Continuous-time noise densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuNoiseSpec {
    /// rad/s/√Hz
    pub gyro_noise_density: f64,
    /// m/s²/√Hz
    pub accel_noise_density: f64,
    /// rad/s²/√Hz
    pub gyro_bias_random_walk: f64,
    /// m/s³/√Hz
    pub accel_bias_random_walk: f64,
}

impl Default for ImuNoiseSpec {
    fn default() -> Self {
        Self {
            // 0.15 deg/√h
            gyro_noise_density: 0.15_f64.to_radians() / 60.0,
            accel_noise_density: 0.05,
            gyro_bias_random_walk: 1e-5,
            accel_bias_random_walk: 1e-4,
        }
    }
}

impl ImuNoiseSpec {
    pub fn validate(&self) -> bool {
        [
            self.gyro_noise_density,
            self.accel_noise_density,
            self.gyro_bias_random_walk,
            self.accel_bias_random_walk,
        ]
        .iter()
        .all(|x| x.is_finite() && *x >= 0.0)
    }
}
