//! Lie-group primitives, the pinhole camera model, the generalized-camera ray
//! representation of a rig, and ray triangulation.

mod camera;
mod lie;
mod triangulate;

use thiserror::Error;

pub use camera::{
    forward_camera_rotation, mount_rotation, pixel_to_ray, CameraId, CameraIntrinsics,
    Ray, RigCalibration, RigCamera, MIN_DEPTH, UNDISTORT_ITERATIONS,
};
pub use lie::{
    hat, se3_exp, se3_log, so3_right_jacobian, so3_right_jacobian_inv, Mat3, Pose, Rotation,
    Twist, Vec3,
};
pub use triangulate::{triangulate, MAX_CONDITION};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is behind the camera")]
    PointBehindCamera,
    #[error("unknown camera id {0}")]
    UnknownCamera(CameraId),
    #[error("pixel ({u}, {v}) outside the image of camera {camera}")]
    PixelOutOfBounds { camera: CameraId, u: f64, v: f64 },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rig: {0}")]
    InvalidRig(String),
}
