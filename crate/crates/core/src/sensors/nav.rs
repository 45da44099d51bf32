use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use super::ImuBias;
use crate::geometry::{Pose, Rotation, Vec3};

/// Tangent dimension of a navigation state.
pub const NAV_DIM: usize = 15;
/// Offsets into the tangent `[δρ, δθ, δv, δb_g, δb_a]`. Position and
/// rotation are perturbed on the right (body frame), velocity and biases
/// additively.
pub const TAN_POS: usize = 0;
pub const TAN_ROT: usize = 3;
pub const TAN_VEL: usize = 6;
pub const TAN_BG: usize = 9;
pub const TAN_BA: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NavState {
    /// Body to world.
    pub pose: Pose,
    /// World frame, m/s.
    pub velocity: Vec3,
    pub bias: ImuBias,
}

impl NavState {
    pub fn new(pose: Pose, velocity: Vec3, bias: ImuBias) -> Self {
        Self { pose, velocity, bias }
    }

    pub fn is_finite(&self) -> bool {
        self.pose.is_finite()
            && self.velocity.iter().all(|x| x.is_finite())
            && self.bias.is_finite()
    }

    pub fn retract(&self, d: &SVector<f64, NAV_DIM>) -> Self {
        let rho: Vec3 = d.fixed_rows::<3>(TAN_POS).into_owned();
        let theta: Vec3 = d.fixed_rows::<3>(TAN_ROT).into_owned();
        let r = self.pose.rotation;
        Self {
            pose: Pose::new(
                r * Rotation::exp(&theta),
                self.pose.translation + r.rotate(&rho),
            ),
            velocity: self.velocity + d.fixed_rows::<3>(TAN_VEL),
            bias: ImuBias {
                gyro: self.bias.gyro + d.fixed_rows::<3>(TAN_BG),
                accel: self.bias.accel + d.fixed_rows::<3>(TAN_BA),
            },
        }
    }

    /// Inverse of [`NavState::retract`]: `self.retract(self.local(other)) == other`.
    pub fn local(&self, other: &NavState) -> SVector<f64, NAV_DIM> {
        let r = self.pose.rotation;
        let mut d = SVector::<f64, NAV_DIM>::zeros();
        d.fixed_rows_mut::<3>(TAN_POS)
            .copy_from(&r.inverse_rotate(&(other.pose.translation - self.pose.translation)));
        d.fixed_rows_mut::<3>(TAN_ROT)
            .copy_from(&(r.inverse() * other.pose.rotation).log());
        d.fixed_rows_mut::<3>(TAN_VEL)
            .copy_from(&(other.velocity - self.velocity));
        d.fixed_rows_mut::<3>(TAN_BG)
            .copy_from(&(other.bias.gyro - self.bias.gyro));
        d.fixed_rows_mut::<3>(TAN_BA)
            .copy_from(&(other.bias.accel - self.bias.accel));
        d
    }
}
