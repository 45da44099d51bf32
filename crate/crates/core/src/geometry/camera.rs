//! Pinhole cameras with two-parameter radial distortion, multi-camera rigs,
//! and the generalized-camera ray view of a rig.
//!
//! Frame conventions: the rig body frame is x-forward, y-right, z-down. Camera
//! optical frames are x-right, y-down, z along the optical axis.

use nalgebra::{Matrix2x3, Vector2};
use serde::{Deserialize, Serialize};

use super::lie::{Mat3, Pose, Rotation, Vec3};
use super::GeometryError;

pub type CameraId = u32;

/// Fixed-point iterations used to invert the radial distortion.
pub const UNDISTORT_ITERATIONS: usize = 8;

/// Points closer than this to the image plane cannot be projected.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
}

impl CameraIntrinsics {
    /// Undistorted pinhole camera with square pixels whose horizontal field of
    /// view is `hfov` radians and principal point at the image center.
    pub fn from_fov(width: u32, height: u32, hfov: f64) -> Self {
        let f = (width as f64 / 2.0) / (hfov / 2.0).tan();
        Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            k1: 0.0,
            k2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64
            && self.k1.is_finite()
            && self.k2.is_finite();
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics(format!("{self:?}")))
        }
    }

    fn distortion_factor(&self, r2: f64) -> f64 {
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    /// Applies radial distortion to normalized image coordinates.
    pub fn distort(&self, xn: &Vector2<f64>) -> Vector2<f64> {
        xn * self.distortion_factor(xn.norm_squared())
    }

    /// Inverts [`Self::distort`] by fixed-point iteration.
    pub fn undistort(&self, xd: &Vector2<f64>) -> Vector2<f64> {
        if self.k1 == 0.0 && self.k2 == 0.0 {
            return *xd;
        }
        let mut xu = *xd;
        for _ in 0..UNDISTORT_ITERATIONS {
            xu = xd / self.distortion_factor(xu.norm_squared());
        }
        xu
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }

    /// Projects a point given in the camera optical frame.
    pub fn project(&self, p: &Vec3) -> Result<Vector2<f64>, GeometryError> {
        if p.z <= MIN_DEPTH {
            return Err(GeometryError::PointBehindCamera);
        }
        let xd = self.distort(&Vector2::new(p.x / p.z, p.y / p.z));
        Ok(Vector2::new(self.fx * xd.x + self.cx, self.fy * xd.y + self.cy))
    }

    /// Projection together with its 2×3 Jacobian with respect to the point.
    pub fn project_with_jacobian(
        &self,
        p: &Vec3,
    ) -> Result<(Vector2<f64>, Matrix2x3<f64>), GeometryError> {
        if p.z <= MIN_DEPTH {
            return Err(GeometryError::PointBehindCamera);
        }
        let inv_z = 1.0 / p.z;
        let x = p.x * inv_z;
        let y = p.y * inv_z;
        let r2 = x * x + y * y;
        let d = self.distortion_factor(r2);
        // ∂d/∂(r²)
        let dd = self.k1 + 2.0 * self.k2 * r2;
        let pixel = Vector2::new(self.fx * x * d + self.cx, self.fy * y * d + self.cy);

        // ∂(x d, y d)/∂(x, y)
        let a11 = d + 2.0 * x * x * dd;
        let a12 = 2.0 * x * y * dd;
        let a22 = d + 2.0 * y * y * dd;
        // ∂(x, y)/∂p
        let n = Matrix2x3::new(inv_z, 0.0, -x * inv_z, 0.0, inv_z, -y * inv_z);
        let dist = nalgebra::Matrix2::new(self.fx * a11, self.fx * a12, self.fy * a12, self.fy * a22);
        Ok((pixel, dist * n))
    }

    /// Unit bearing in the camera frame for a pixel.
    pub fn bearing(&self, pixel: &Vector2<f64>) -> Vec3 {
        let xd = Vector2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy);
        let xu = self.undistort(&xd);
        Vec3::new(xu.x, xu.y, 1.0).normalize()
    }
}

/// One camera of a rig: intrinsics plus the extrinsic `C_p` mapping the
/// camera frame into the rig body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigCamera {
    pub id: CameraId,
    pub intrinsics: CameraIntrinsics,
    pub extrinsic: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigCalibration {
    cameras: Vec<RigCamera>,
}

impl RigCalibration {
    pub fn new(cameras: Vec<RigCamera>) -> Result<Self, GeometryError> {
        if cameras.is_empty() {
            return Err(GeometryError::InvalidRig("rig has no cameras".into()));
        }
        for (i, c) in cameras.iter().enumerate() {
            c.intrinsics.validate()?;
            if cameras[..i].iter().any(|o| o.id == c.id) {
                return Err(GeometryError::InvalidRig(format!("duplicate camera id {}", c.id)));
            }
        }
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[RigCamera] {
        &self.cameras
    }

    pub fn camera(&self, id: CameraId) -> Result<&RigCamera, GeometryError> {
        self.cameras
            .iter()
            .find(|c| c.id == id)
            .ok_or(GeometryError::UnknownCamera(id))
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

/// A ray of the generalized camera, expressed in the rig body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
        }
    }

    pub fn at(&self, distance: f64) -> Vec3 {
        self.origin + self.direction * distance
    }

    pub fn transformed(&self, pose: &Pose) -> Ray {
        Ray {
            origin: pose.transform_point(&self.origin),
            direction: pose.rotation.rotate(&self.direction),
        }
    }
}

/// Back-projects a pixel of one rig camera into a ray of the rig body frame.
pub fn pixel_to_ray(
    rig: &RigCalibration,
    camera_id: CameraId,
    pixel: &Vector2<f64>,
) -> Result<Ray, GeometryError> {
    let cam = rig.camera(camera_id)?;
    if !cam.intrinsics.contains(pixel) {
        return Err(GeometryError::PixelOutOfBounds {
            camera: camera_id,
            u: pixel.x,
            v: pixel.y,
        });
    }
    let bearing = cam.intrinsics.bearing(pixel);
    Ok(Ray {
        origin: cam.extrinsic.translation,
        direction: cam.extrinsic.rotation.rotate(&bearing),
    })
}

/// Rotation of a level, forward-looking camera: optical z onto body x,
/// image x onto body y and image y onto body z.
pub fn forward_camera_rotation() -> Rotation {
    Rotation::from_matrix(&Mat3::new(
        0.0, 0.0, 1.0, //
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0,
    ))
}

/// Camera-to-body rotation for a camera pitched down by `pitch_down` and
/// turned to starboard by `yaw_out` (radians) from the forward direction.
pub fn mount_rotation(yaw_out: f64, pitch_down: f64) -> Rotation {
    Rotation::rot_z(yaw_out) * Rotation::rot_y(-pitch_down) * forward_camera_rotation()
}
