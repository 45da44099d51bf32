//! SO(3)/SE(3) primitives.
//!
//! Rotations are stored as Hamilton unit quaternions with the scalar part
//! first and canonicalized to `qw >= 0`. Tangent vectors of SE(3) are ordered
//! `(linear, angular)`; perturbations are applied on the right,
//! `X ⊕ ξ = X · exp(ξ)`.

use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix `[v]×` such that `[v]× w = v × w`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of SO(3): `exp(φ + δ) ≈ exp(φ) exp(Jr(φ) δ)`.
pub fn so3_right_jacobian(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let w = hat(phi);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        return Mat3::identity() - 0.5 * w + w * w / 6.0;
    }
    let theta = theta2.sqrt();
    Mat3::identity() - (1.0 - theta.cos()) / theta2 * w
        + (theta - theta.sin()) / (theta2 * theta) * w * w
}

/// Inverse of [`so3_right_jacobian`].
pub fn so3_right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let w = hat(phi);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        return Mat3::identity() + 0.5 * w + w * w / 12.0;
    }
    let theta = theta2.sqrt();
    let coeff = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Mat3::identity() + 0.5 * w + coeff * w * w
}

/// Unit quaternion rotation, scalar first, canonical `qw >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation(UnitQuaternion<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds a rotation from quaternion components, normalizing them.
    /// Returns `None` for a zero or non-finite quaternion.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return None;
        }
        Some(Self::canonical(UnitQuaternion::new_unchecked(q / n)))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self::canonical(UnitQuaternion::new_normalize(q.into_inner()))
    }

    /// From a proper rotation matrix. The caller is responsible for
    /// orthonormality.
    pub fn from_matrix(m: &Mat3) -> Self {
        Self::canonical(UnitQuaternion::from_rotation_matrix(
            &Rotation3::from_matrix_unchecked(*m),
        ))
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::exp(&(axis / n * angle))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::exp(&Vec3::new(angle, 0.0, 0.0))
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::exp(&Vec3::new(0.0, angle, 0.0))
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::exp(&Vec3::new(0.0, 0.0, angle))
    }

    fn canonical(q: UnitQuaternion<f64>) -> Self {
        if q.w < 0.0 {
            Rotation(UnitQuaternion::new_unchecked(-q.into_inner()))
        } else {
            Rotation(q)
        }
    }

    /// Exponential map from a rotation vector.
    pub fn exp(phi: &Vec3) -> Self {
        let theta2 = phi.norm_squared();
        let (w, s) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
            (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
        } else {
            let theta = theta2.sqrt();
            let half = 0.5 * theta;
            (half.cos(), half.sin() / theta)
        };
        let q = Quaternion::new(w, s * phi.x, s * phi.y, s * phi.z);
        Self::canonical(UnitQuaternion::new_normalize(q))
    }

    /// Logarithm on the principal branch; the angle lies in `[0, π]`.
    pub fn log(&self) -> Vec3 {
        let q = self.0.quaternion();
        let v = Vec3::new(q.i, q.j, q.k);
        let s = v.norm();
        // qw >= 0 by construction
        let w = q.w;
        if s < SMALL_ANGLE {
            // θ ≈ 2 s / w with a third-order correction
            let s2 = s * s;
            let w2 = w * w;
            return v * (2.0 / w) * (1.0 - s2 / (3.0 * w2));
        }
        let theta = 2.0 * s.atan2(w);
        v * (theta / s)
    }

    pub fn matrix(&self) -> Mat3 {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    /// Components `(w, x, y, z)`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn inverse(&self) -> Self {
        Self::canonical(self.0.inverse())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn inverse_rotate(&self, v: &Vec3) -> Vec3 {
        self.0.inverse_transform_vector(v)
    }

    /// Angle of the rotation in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    /// Re-normalizes the quaternion; use after long composition chains.
    pub fn renormalized(&self) -> Self {
        Self::canonical(UnitQuaternion::new_normalize(self.0.into_inner()))
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation::canonical(self.0 * rhs.0)
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.rotate(rhs)
    }
}

/// Element of se(3), ordered `(linear, angular)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            linear: v.fixed_rows::<3>(0).into_owned(),
            angular: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.linear);
        v.fixed_rows_mut::<3>(3).copy_from(&self.angular);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|x| x.is_finite())
    }
}

/// Rigid transform mapping points from a local frame into a parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Self::new(r, Vec3::zeros())
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Pose::new(r_inv, -r_inv.rotate(&self.translation))
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse_rotate(&(p - self.translation))
    }

    pub fn exp(twist: &Twist) -> Self {
        se3_exp(twist)
    }

    pub fn log(&self) -> Twist {
        se3_log(self)
    }

    /// Right retraction `self · exp(ξ)` with `ξ = (linear, angular)`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Self {
        *self * se3_exp(&Twist::from_vector(delta))
    }

    /// Local coordinates of `other` around `self`: `log(self⁻¹ · other)`.
    pub fn local(&self, other: &Pose) -> Vector6<f64> {
        se3_log(&(self.inverse() * *other)).to_vector()
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|x| x.is_finite())
            && self.rotation.wxyz().iter().all(|x| x.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        Pose::new(
            self.rotation * rhs.rotation,
            self.rotation.rotate(&rhs.translation) + self.translation,
        )
    }
}

/// `V(ω)` such that the translation of `exp(ρ, ω)` is `V ρ`.
fn se3_left_jacobian_rotation_part(omega: &Vec3) -> Mat3 {
    let theta2 = omega.norm_squared();
    let w = hat(omega);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        return Mat3::identity() + 0.5 * w + w * w / 6.0;
    }
    let theta = theta2.sqrt();
    Mat3::identity()
        + (1.0 - theta.cos()) / theta2 * w
        + (theta - theta.sin()) / (theta2 * theta) * w * w
}

fn se3_left_jacobian_rotation_part_inv(omega: &Vec3) -> Mat3 {
    let theta2 = omega.norm_squared();
    let w = hat(omega);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        return Mat3::identity() - 0.5 * w + w * w / 12.0;
    }
    let theta = theta2.sqrt();
    let coeff = (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta2;
    Mat3::identity() - 0.5 * w + coeff * w * w
}

/// Closed-form exponential map of SE(3).
pub fn se3_exp(twist: &Twist) -> Pose {
    let rotation = Rotation::exp(&twist.angular);
    let v = se3_left_jacobian_rotation_part(&twist.angular);
    Pose::new(rotation, v * twist.linear)
}

/// Logarithm of SE(3) on the principal branch.
pub fn se3_log(pose: &Pose) -> Twist {
    let angular = pose.rotation.log();
    let v_inv = se3_left_jacobian_rotation_part_inv(&angular);
    Twist::new(v_inv * pose.translation, angular)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// 4×4 matrix exponential by truncated power series.
    fn expm_series(twist: &Twist, terms: usize) -> nalgebra::Matrix4<f64> {
        let mut a = nalgebra::Matrix4::zeros();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&twist.angular));
        a.fixed_view_mut::<3, 1>(0, 3).copy_from(&twist.linear);
        let mut sum = nalgebra::Matrix4::identity();
        let mut term = nalgebra::Matrix4::identity();
        for k in 1..terms {
            term = term * a / k as f64;
            sum += term;
        }
        sum
    }

    fn homogeneous(p: &Pose) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&p.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation);
        m
    }

    #[test]
    fn zero_twist_is_identity() {
        let p = se3_exp(&Twist::zero());
        assert_eq!(p.rotation.wxyz(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.translation, Vec3::zeros());
    }

    #[test]
    fn pure_translation_exp_and_log() {
        let p = se3_exp(&Twist::new(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros()));
        assert_eq!(p.rotation, Rotation::identity());
        assert_eq!(p.translation, Vec3::new(1.0, 2.0, 3.0));

        let t = se3_log(&Pose::from_translation(Vec3::new(4.0, 5.0, 6.0)));
        assert_eq!(t.linear, Vec3::new(4.0, 5.0, 6.0));
        assert_eq!(t.angular, Vec3::zeros());
        assert_eq!(se3_log(&Pose::identity()), Twist::zero());
    }

    #[test]
    fn quarter_yaw_matches_series_oracle() {
        let twist = Twist::new(Vec3::zeros(), Vec3::new(0.0, 0.0, PI / 2.0));
        let oracle = expm_series(&twist, 20);
        let ours = homogeneous(&se3_exp(&twist));
        assert!((oracle - ours).abs().max() <= 1e-10);
        let general = Twist::new(Vec3::new(0.3, -1.2, 0.7), Vec3::new(0.4, -0.2, 0.9));
        let oracle = expm_series(&general, 30);
        assert!((oracle - homogeneous(&se3_exp(&general))).abs().max() <= 1e-10);
    }

    #[test]
    fn log_at_pi_extracts_axis() {
        let axis = Vec3::new(1.0, 2.0, -2.0).normalize();
        let r = Rotation::from_axis_angle(&axis, PI);
        let phi = r.log();
        assert!((phi.norm() - PI).abs() < 1e-12);
        assert!((phi.normalize().cross(&axis)).norm() < 1e-12);
        let back = Rotation::exp(&phi);
        assert!((back.matrix() - r.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn canonical_scalar_part() {
        let r = Rotation::from_wxyz(-0.5, 0.5, 0.5, 0.5).unwrap();
        assert!(r.wxyz()[0] >= 0.0);
        assert!(Rotation::from_wxyz(0.0, 0.0, 0.0, 0.0).is_none());
    }

    #[test]
    fn right_jacobian_inverse() {
        for phi in [Vec3::new(0.1, -0.3, 0.2), Vec3::new(1e-10, 0.0, 0.0), Vec3::new(2.0, 1.0, 0.5)] {
            let p = so3_right_jacobian(&phi) * so3_right_jacobian_inv(&phi);
            assert!((p - Mat3::identity()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn right_jacobian_first_order() {
        let phi = Vec3::new(0.4, -0.7, 1.1);
        let d = Vec3::new(1e-6, -2e-6, 0.5e-6);
        let lhs = Rotation::exp(&(phi + d));
        let rhs = Rotation::exp(&phi) * Rotation::exp(&(so3_right_jacobian(&phi) * d));
        assert!((lhs.matrix() - rhs.matrix()).abs().max() < 1e-11);
    }

    #[test]
    fn composition_keeps_unit_norm() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut acc = Rotation::identity();
        for i in 0..1_000_000 {
            let phi = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            acc = acc * Rotation::exp(&phi);
            if i % 1000 == 0 {
                acc = acc.renormalized();
            }
            let n = acc.quaternion().quaternion().norm();
            assert!((n - 1.0).abs() <= 1e-9, "norm drift {n}");
        }
    }

    fn twist_strategy(max_angle: f64) -> impl Strategy<Value = Twist> {
        (
            prop::array::uniform3(-10.0..10.0f64),
            prop::array::uniform3(-1.0..1.0f64),
            0.0..max_angle,
        )
            .prop_map(|(l, a, ang)| {
                let axis = Vec3::from(a);
                let axis = if axis.norm() < 1e-3 { Vec3::z() } else { axis.normalize() };
                Twist::new(Vec3::from(l), axis * ang)
            })
    }

    fn pose_strategy() -> impl Strategy<Value = Pose> {
        twist_strategy(PI).prop_map(|t| se3_exp(&t))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn exp_log_round_trip(t in twist_strategy(PI - 0.1)) {
            let back = se3_log(&se3_exp(&t));
            prop_assert!((back.to_vector() - t.to_vector()).abs().max() <= 1e-9);
        }

        #[test]
        fn inverse_of_composition(a in pose_strategy(), b in pose_strategy()) {
            let lhs = (a * b).inverse();
            let rhs = b.inverse() * a.inverse();
            prop_assert!((homogeneous(&lhs) - homogeneous(&rhs)).abs().max() <= 1e-9);
            let id = a * a.inverse();
            prop_assert!((homogeneous(&id) - nalgebra::Matrix4::identity()).abs().max() <= 1e-9);
        }

        #[test]
        fn composition_is_associative(a in pose_strategy(), b in pose_strategy(), c in pose_strategy()) {
            let lhs = (a * b) * c;
            let rhs = a * (b * c);
            prop_assert!((homogeneous(&lhs) - homogeneous(&rhs)).abs().max() <= 1e-9);
        }
    }
}
