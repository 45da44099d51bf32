//! TOML calibration documents.
//!
//! ```toml
//! [[camera]]
//! id = 0
//! width = 1600
//! height = 1200
//! fx = 920.3
//! fy = 920.3
//! cx = 800.0
//! cy = 600.0
//! # camera-to-body rotation, row-major; alternatively give
//! # `yaw_deg` / `pitch_deg` for a mount turned out and tilted down.
//! rotation = [[0, 0, 1], [1, 0, 0], [0, 1, 0]]
//! translation = [0.3, 0.0, 0.1]
//!
//! [dvl]
//! rotation = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
//! translation = [0.0, 0.0, 0.2]
//! ```
//!
//! `[imu]` is optional and defaults to identity.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geometry::{mount_rotation, CameraIntrinsics, Mat3, Pose, RigCalibration, RigCamera, Rotation, Vec3};

/// Rotation drift above which a matrix is rejected outright.
pub const MAX_ROTATION_DRIFT: f64 = 1e-3;
/// Drift tolerated without re-orthonormalizing.
pub const ROTATION_DRIFT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_deg: Option<f64>,
    #[serde(default)]
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraDoc {
    pub id: u32,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(flatten)]
    pub extrinsic: ExtrinsicDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationDoc {
    pub camera: Vec<CameraDoc>,
    #[serde(default)]
    pub dvl: ExtrinsicDoc,
    #[serde(default)]
    pub imu: ExtrinsicDoc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFile {
    pub rig: RigCalibration,
    pub dvl_extrinsic: Pose,
    /// Parsed and carried along; the estimator assumes the IMU defines the
    /// body frame.
    pub imu_extrinsic: Pose,
}

/// Nearest rotation to `m` after checking that it is close to one already.
pub fn orthonormalize(m: &Mat3, what: &str) -> Result<Mat3, IoError> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(IoError::NonOrthonormalRotation {
            what: what.into(),
            drift: f64::INFINITY,
        });
    }
    let drift = (m.transpose() * m - Mat3::identity()).amax();
    if drift > MAX_ROTATION_DRIFT || m.determinant() <= 0.0 {
        return Err(IoError::NonOrthonormalRotation {
            what: what.into(),
            drift,
        });
    }
    if drift <= ROTATION_DRIFT_TOLERANCE {
        return Ok(*m);
    }
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    Ok(u * vt)
}

fn extrinsic_pose(doc: &ExtrinsicDoc, what: &str) -> Result<Pose, IoError> {
    let rotation = match (&doc.rotation, doc.yaw_deg, doc.pitch_deg) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(IoError::Schema(format!(
                "{what}: give either `rotation` or `yaw_deg`/`pitch_deg`, not both"
            )))
        }
        (Some(r), None, None) => {
            let m = Matrix3::from_fn(|i, j| r[i][j]);
            Rotation::from_matrix(&orthonormalize(&m, what)?)
        }
        (None, yaw, pitch) => {
            if yaw.is_none() && pitch.is_none() && what.starts_with("camera") {
                return Err(IoError::Schema(format!("{what}: missing rotation")));
            }
            if yaw.is_none() && pitch.is_none() {
                Rotation::identity()
            } else {
                mount_rotation(
                    yaw.unwrap_or(0.0).to_radians(),
                    pitch.unwrap_or(0.0).to_radians(),
                )
            }
        }
    };
    let t = Vec3::from(doc.translation);
    if !t.iter().all(|x| x.is_finite()) {
        return Err(IoError::Schema(format!("{what}: non-finite translation")));
    }
    Ok(Pose::new(rotation, t))
}

impl CalibrationDoc {
    pub fn to_calibration(&self) -> Result<CalibrationFile, IoError> {
        let mut cameras = Vec::with_capacity(self.camera.len());
        for c in &self.camera {
            if cameras.iter().any(|o: &RigCamera| o.id == c.id) {
                return Err(IoError::Schema(format!("duplicate camera_id {}", c.id)));
            }
            let intrinsics = CameraIntrinsics {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                width: c.width,
                height: c.height,
                k1: c.k1,
                k2: c.k2,
            };
            intrinsics
                .validate()
                .map_err(|e| IoError::Schema(format!("camera {}: {e}", c.id)))?;
            cameras.push(RigCamera {
                id: c.id,
                intrinsics,
                extrinsic: extrinsic_pose(&c.extrinsic, &format!("camera {}", c.id))?,
            });
        }
        if cameras.is_empty() {
            return Err(IoError::Schema("at least one [[camera]] is required".into()));
        }
        let rig = RigCalibration::new(cameras).map_err(|e| IoError::Schema(e.to_string()))?;
        Ok(CalibrationFile {
            rig,
            dvl_extrinsic: extrinsic_pose(&self.dvl, "dvl")?,
            imu_extrinsic: extrinsic_pose(&self.imu, "imu")?,
        })
    }
}

fn pose_doc(p: &Pose) -> ExtrinsicDoc {
    let m = p.rotation.matrix();
    ExtrinsicDoc {
        rotation: Some(std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))),
        yaw_deg: None,
        pitch_deg: None,
        translation: [p.translation.x, p.translation.y, p.translation.z],
    }
}

impl CalibrationFile {
    pub fn to_doc(&self) -> CalibrationDoc {
        CalibrationDoc {
            camera: self
                .rig
                .cameras()
                .iter()
                .map(|c| CameraDoc {
                    id: c.id,
                    width: c.intrinsics.width,
                    height: c.intrinsics.height,
                    fx: c.intrinsics.fx,
                    fy: c.intrinsics.fy,
                    cx: c.intrinsics.cx,
                    cy: c.intrinsics.cy,
                    k1: c.intrinsics.k1,
                    k2: c.intrinsics.k2,
                    extrinsic: pose_doc(&c.extrinsic),
                })
                .collect(),
            dvl: pose_doc(&self.dvl_extrinsic),
            imu: pose_doc(&self.imu_extrinsic),
        }
    }
}

pub fn load_calibration(text: &str) -> Result<CalibrationFile, IoError> {
    let doc: CalibrationDoc = toml::from_str(text).map_err(|e| IoError::Schema(e.to_string()))?;
    doc.to_calibration()
}

pub fn save_calibration(calib: &CalibrationFile) -> Result<String, IoError> {
    toml::to_string(&calib.to_doc()).map_err(|e| IoError::Serialize(e.to_string()))
}
