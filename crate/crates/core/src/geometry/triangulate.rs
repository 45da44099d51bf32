use nalgebra::SymmetricEigen;

use super::camera::Ray;
use super::lie::{Mat3, Pose, Vec3};
use super::GeometryError;

/// Largest accepted condition number of the 3×3 normal matrix.
pub const MAX_CONDITION: f64 = 1e8;

/// Linear least-squares midpoint of rays given in their rig frames, each
/// paired with the rig pose in the world. Minimizes the sum of squared
/// orthogonal distances from the point to every world-frame ray.
pub fn triangulate(rays: &[(Ray, Pose)]) -> Result<Vec3, GeometryError> {
    if rays.len() < 2 {
        return Err(GeometryError::DegenerateGeometry(format!(
            "{} ray(s), need at least 2",
            rays.len()
        )));
    }
    let mut a = Mat3::zeros();
    let mut b = Vec3::zeros();
    for (ray, pose) in rays {
        let world = ray.transformed(pose);
        let d = world.direction.normalize();
        let proj = Mat3::identity() - d * d.transpose();
        a += proj;
        b += proj * world.origin;
    }
    let eig = SymmetricEigen::new(a);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || max / min > MAX_CONDITION {
        return Err(GeometryError::DegenerateGeometry(format!(
            "normal matrix condition {:.3e}",
            max / min
        )));
    }
    // a is symmetric positive definite here
    let chol = a.cholesky().ok_or_else(|| GeometryError::DegenerateGeometry("normal matrix not positive definite".into()))?;
    Ok(chol.solve(&b))
}
