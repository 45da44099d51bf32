//! Multi-sensor factor-graph SLAM back-end for underwater vehicles.
//!
//! The crate fuses generalized multi-camera reprojection, preintegrated IMU,
//! DVL body-velocity and pressure-depth measurements in a sparse
//! Levenberg–Marquardt smoother, and ships the tooling needed to exercise it
//! without field data: a deterministic survey simulator, log/calibration/PLY
//! I/O, semantic point-cloud fusion, and trajectory error metrics.

pub mod geometry;
pub mod sensors;
pub mod graph;
pub mod io;
pub mod simulator;
pub mod semantics;
pub mod eval;
pub mod pipeline;
