//! DVL body-velocity and pressure-depth residuals.

use nalgebra::{SMatrix, SVector};

use super::{DepthSample, DvlSample, NavState};
use crate::geometry::{hat, Pose, Vec3};

/// `r = v_meas − R_dvlᵀ (R_bᵀ v_w + ω × t_dvl)` with `ω = gyro − b_g`.
/// Axes flagged invalid in the sample read zero.
pub fn dvl_residual(state: &NavState, sample: &DvlSample, extrinsic: &Pose, gyro: &Vec3) -> Vec3 {
    let omega = gyro - state.bias.gyro;
    let v_body = state.pose.rotation.inverse_rotate(&state.velocity)
        + omega.cross(&extrinsic.translation);
    let predicted = extrinsic.rotation.inverse_rotate(&v_body);
    let mut r = sample.velocity_body - predicted;
    for i in 0..3 {
        if !sample.valid[i] {
            r[i] = 0.0;
        }
    }
    r
}

/// Jacobians of [`dvl_residual`] with respect to the state tangent and the
/// DVL extrinsic (translation, then rotation, both right-perturbed).
#[derive(Debug, Clone, PartialEq)]
pub struct DvlJacobians {
    pub residual: Vec3,
    pub d_state: SMatrix<f64, 3, 15>,
    pub d_extrinsic: SMatrix<f64, 3, 6>,
}

pub fn dvl_jacobians(
    state: &NavState,
    sample: &DvlSample,
    extrinsic: &Pose,
    gyro: &Vec3,
) -> DvlJacobians {
    use super::{TAN_BG, TAN_ROT, TAN_VEL};

    let residual = dvl_residual(state, sample, extrinsic, gyro);
    let omega = gyro - state.bias.gyro;
    let rb = state.pose.rotation.matrix();
    let rdt = extrinsic.rotation.matrix().transpose();
    let v_body = rb.transpose() * state.velocity + omega.cross(&extrinsic.translation);

    let mut d_state = SMatrix::<f64, 3, 15>::zeros();
    d_state
        .fixed_view_mut::<3, 3>(0, TAN_ROT)
        .copy_from(&(-rdt * hat(&(rb.transpose() * state.velocity))));
    d_state
        .fixed_view_mut::<3, 3>(0, TAN_VEL)
        .copy_from(&(-rdt * rb.transpose()));
    d_state
        .fixed_view_mut::<3, 3>(0, TAN_BG)
        .copy_from(&(-rdt * hat(&extrinsic.translation)));

    let mut d_extrinsic = SMatrix::<f64, 3, 6>::zeros();
    let rd = extrinsic.rotation.matrix();
    d_extrinsic
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-rdt * hat(&omega) * rd));
    d_extrinsic
        .fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-hat(&(rdt * v_body))));

    for i in 0..3 {
        if !sample.valid[i] {
            d_state.row_mut(i).fill(0.0);
            d_extrinsic.row_mut(i).fill(0.0);
        }
    }
    DvlJacobians {
        residual,
        d_state,
        d_extrinsic,
    }
}

/// `r = measured − p_z`.
pub fn depth_residual(state: &NavState, sample: &DepthSample) -> f64 {
    sample.depth - state.pose.translation.z
}

/// Jacobian of [`depth_residual`] with respect to the state tangent.
pub fn depth_jacobian(state: &NavState) -> SVector<f64, 15> {
    let row: Vec3 = state.pose.rotation.matrix().row(2).transpose();
    let mut j = SVector::<f64, 15>::zeros();
    j.fixed_rows_mut::<3>(super::TAN_POS).copy_from(&(-row));
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use crate::sensors::ImuBias;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    fn dvl(v: Vec3) -> DvlSample {
        DvlSample {
            t: 0,
            velocity_body: v,
            valid: [true; 3],
        }
    }

    fn moving(rotation: Rotation, v: Vec3) -> NavState {
        NavState::new(Pose::new(rotation, Vec3::zeros()), v, ImuBias::zero())
    }

    #[test]
    fn dvl_examples() {
        let ext = Pose::identity();
        let s = moving(Rotation::identity(), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(dvl_residual(&s, &dvl(Vec3::new(1.0, 0.0, 0.0)), &ext, &Vec3::zeros()), Vec3::zeros());

        let s = moving(Rotation::rot_z(FRAC_PI_2), Vec3::new(1.0, 0.0, 0.0));
        let r = dvl_residual(&s, &dvl(Vec3::new(0.0, -1.0, 0.0)), &ext, &Vec3::zeros());
        assert!(r.norm() <= 1e-12);
        let r = dvl_residual(&s, &dvl(Vec3::new(1.0, 0.0, 0.0)), &ext, &Vec3::zeros());
        assert!((r - Vec3::new(1.0, 1.0, 0.0)).norm() <= 1e-12);
    }

    #[test]
    fn dvl_lever_arm_and_mask() {
        let ext = Pose::new(Rotation::identity(), Vec3::new(0.0, 0.0, 0.5));
        let s = moving(Rotation::identity(), Vec3::zeros());
        // yaw rate about z does not move a point on the z axis
        let r = dvl_residual(&s, &dvl(Vec3::zeros()), &ext, &Vec3::new(0.0, 0.0, 1.0));
        assert!(r.norm() <= 1e-12);
        // pitch rate 1 rad/s with a 0.5 m lever: ω × t = (0.5, 0, 0)
        let r = dvl_residual(&s, &dvl(Vec3::zeros()), &ext, &Vec3::new(0.0, 1.0, 0.0));
        assert!((r - Vec3::new(-0.5, 0.0, 0.0)).norm() <= 1e-12);
        let mut m = dvl(Vec3::new(9.0, 9.0, 9.0));
        m.valid = [true, false, true];
        let r = dvl_residual(&s, &m, &Pose::identity(), &Vec3::zeros());
        assert_eq!(r, Vec3::new(9.0, 0.0, 9.0));
    }

    #[test]
    fn dvl_invariant_under_world_transform() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mut v = || Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let ext = Pose::new(Rotation::exp(&(v() * 0.5)), v());
            let s = moving(Rotation::exp(&(v() * 3.0)), v());
            let gyro = v();
            let meas = dvl(s.pose.rotation.inverse_rotate(&s.velocity) * 0.9);
            let r0 = dvl_residual(&s, &meas, &ext, &gyro);
            let world = Pose::new(Rotation::exp(&(v() * 3.0)), v() * 10.0);
            let moved = NavState::new(world * s.pose, world.rotation.rotate(&s.velocity), s.bias);
            assert!((dvl_residual(&moved, &meas, &ext, &gyro) - r0).norm() <= 1e-12);
        }
    }

    #[test]
    fn depth_examples() {
        let mut s = NavState::default();
        s.pose.translation.z = 30.0;
        assert_eq!(depth_residual(&s, &DepthSample { t: 0, depth: 30.0 }), 0.0);
        assert_eq!(depth_residual(&s, &DepthSample { t: 0, depth: 31.5 }), 1.5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let mut t = s;
            t.pose.rotation = Rotation::rot_z(rng.random_range(-3.2..3.2)) * s.pose.rotation;
            assert_eq!(
                depth_residual(&t, &DepthSample { t: 0, depth: 31.5 }),
                depth_residual(&s, &DepthSample { t: 0, depth: 31.5 })
            );
        }
    }
}
