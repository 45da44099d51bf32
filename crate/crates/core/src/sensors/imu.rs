//! IMU preintegration between two navigation states.
//!
//! Samples are held constant until the next sample (left-Riemann), with the
//! explicit `½ a dt²` position term:
//!
//! ```text
//! Δp ← Δp + Δv dt + ½ ΔR ã dt²
//! Δv ← Δv + ΔR ã dt
//! ΔR ← ΔR exp(ω̃ dt)
//! ```
//!
//! where `ã = a − b_a` and `ω̃ = ω − b_g`. Bias Jacobians and the 9×9
//! covariance (rotation, velocity, position) are propagated alongside.

use nalgebra::{SMatrix, SVector};

use super::{ImuBias, ImuNoiseSpec, ImuSample, NavState, SensorError};
use crate::geometry::{hat, so3_right_jacobian, so3_right_jacobian_inv, Mat3, Pose, Rotation, Vec3};

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Matrix9x6 = SMatrix<f64, 9, 6>;
pub type Vector9 = SVector<f64, 9>;

/// Intervals longer than this are integrated but logged as suspicious.
pub const MAX_NOMINAL_INTERVAL_NS: i64 = 20_000_000;

const NS_PER_S: f64 = 1e9;

/// Summary of the inertial motion between two states, expressed in the frame
/// of the first sample and free of gravity.
#[derive(Debug, Clone, PartialEq)]
pub struct PreintegratedImu {
    pub delta_r: Rotation,
    pub delta_v: Vec3,
    pub delta_p: Vec3,
    /// Seconds.
    pub dt_total: f64,
    pub bias_linearization: ImuBias,
    /// Ordered (rotation, velocity, position).
    pub covariance: Matrix9,
    /// Rows (rotation, velocity, position), columns (gyro bias, accel bias).
    pub bias_jacobian: Matrix9x6,
}

impl PreintegratedImu {
    pub fn identity(bias: ImuBias) -> Self {
        Self {
            delta_r: Rotation::identity(),
            delta_v: Vec3::zeros(),
            delta_p: Vec3::zeros(),
            dt_total: 0.0,
            bias_linearization: bias,
            covariance: Matrix9::zeros(),
            bias_jacobian: Matrix9x6::zeros(),
        }
    }

    fn jac(&self, row: usize, col: usize) -> Mat3 {
        self.bias_jacobian.fixed_view::<3, 3>(row, col).into_owned()
    }

    /// `∂ΔR/∂b_g` (as a right perturbation of ΔR).
    pub fn d_rot_d_bg(&self) -> Mat3 {
        self.jac(0, 0)
    }

    pub fn d_vel_d_bg(&self) -> Mat3 {
        self.jac(3, 0)
    }

    pub fn d_vel_d_ba(&self) -> Mat3 {
        self.jac(3, 3)
    }

    pub fn d_pos_d_bg(&self) -> Mat3 {
        self.jac(6, 0)
    }

    pub fn d_pos_d_ba(&self) -> Mat3 {
        self.jac(6, 3)
    }

    /// Integrates one held sample over `dt` seconds.
    pub fn integrate(&mut self, gyro: &Vec3, accel: &Vec3, dt: f64, noise: &ImuNoiseSpec) {
        let omega = gyro - self.bias_linearization.gyro;
        let acc = accel - self.bias_linearization.accel;
        let dr = self.delta_r.matrix();
        let acc_hat = hat(&acc);
        let dt2 = dt * dt;
        let step = Rotation::exp(&(omega * dt));
        let jr = so3_right_jacobian(&(omega * dt));

        // Covariance transition and noise input matrices.
        let mut a = Matrix9::identity();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&step.matrix().transpose());
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-dr * acc_hat * dt));
        a.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-0.5 * dr * acc_hat * dt2));
        a.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Mat3::identity() * dt));
        let mut b_gyro = SMatrix::<f64, 9, 3>::zeros();
        b_gyro.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr * dt));
        let mut b_acc = SMatrix::<f64, 9, 3>::zeros();
        b_acc.fixed_view_mut::<3, 3>(3, 0).copy_from(&(dr * dt));
        b_acc.fixed_view_mut::<3, 3>(6, 0).copy_from(&(0.5 * dr * dt2));
        // Discrete white-noise variances from the continuous densities.
        let var_g = noise.gyro_noise_density.powi(2) / dt;
        let var_a = noise.accel_noise_density.powi(2) / dt;
        let cov = a * self.covariance * a.transpose()
            + b_gyro * b_gyro.transpose() * var_g
            + b_acc * b_acc.transpose() * var_a;
        self.covariance = 0.5 * (cov + cov.transpose());

        // Bias Jacobians, using ΔR and ∂ΔR/∂b_g from before this step.
        let jr_bg = self.d_rot_d_bg();
        let jv_bg = self.d_vel_d_bg();
        let jv_ba = self.d_vel_d_ba();
        let jp_bg = self.d_pos_d_bg() + jv_bg * dt - 0.5 * dr * acc_hat * jr_bg * dt2;
        let jp_ba = self.d_pos_d_ba() + jv_ba * dt - 0.5 * dr * dt2;
        let jv_bg = jv_bg - dr * acc_hat * jr_bg * dt;
        let jv_ba = jv_ba - dr * dt;
        let jr_bg = step.matrix().transpose() * jr_bg - jr * dt;
        self.bias_jacobian.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr_bg);
        self.bias_jacobian.fixed_view_mut::<3, 3>(3, 0).copy_from(&jv_bg);
        self.bias_jacobian.fixed_view_mut::<3, 3>(3, 3).copy_from(&jv_ba);
        self.bias_jacobian.fixed_view_mut::<3, 3>(6, 0).copy_from(&jp_bg);
        self.bias_jacobian.fixed_view_mut::<3, 3>(6, 3).copy_from(&jp_ba);

        // Deltas.
        let rotated = dr * acc;
        self.delta_p += self.delta_v * dt + 0.5 * rotated * dt2;
        self.delta_v += rotated * dt;
        self.delta_r = self.delta_r * step;
        self.dt_total += dt;
    }

    /// Deltas corrected to first order for a bias different from the
    /// linearization point.
    pub fn corrected(&self, bias: &ImuBias) -> (Rotation, Vec3, Vec3) {
        let dbg = bias.gyro - self.bias_linearization.gyro;
        let dba = bias.accel - self.bias_linearization.accel;
        let dr = self.delta_r * Rotation::exp(&(self.d_rot_d_bg() * dbg));
        let dv = self.delta_v + self.d_vel_d_bg() * dbg + self.d_vel_d_ba() * dba;
        let dp = self.delta_p + self.d_pos_d_bg() * dbg + self.d_pos_d_ba() * dba;
        (dr, dv, dp)
    }

    /// Concatenates two contiguous batches, `self` first. Bias Jacobians and
    /// covariance are composed to first order; both batches must share the
    /// same linearization bias.
    pub fn compose(&self, next: &PreintegratedImu) -> PreintegratedImu {
        let r1 = self.delta_r.matrix();
        let r2 = next.delta_r.matrix();
        let dt2 = next.dt_total;

        let mut a = Matrix9::identity();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&r2.transpose());
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-r1 * hat(&next.delta_v)));
        a.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-r1 * hat(&next.delta_p)));
        a.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Mat3::identity() * dt2));
        let mut b = Matrix9::zeros();
        b.fixed_view_mut::<3, 3>(0, 0).copy_from(&Mat3::identity());
        b.fixed_view_mut::<3, 3>(3, 3).copy_from(&r1);
        b.fixed_view_mut::<3, 3>(6, 6).copy_from(&r1);
        let cov = a * self.covariance * a.transpose() + b * next.covariance * b.transpose();

        let mut jac = Matrix9x6::zeros();
        let jr1 = self.d_rot_d_bg();
        let jr2 = next.d_rot_d_bg();
        jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&(r2.transpose() * jr1 + jr2));
        jac.fixed_view_mut::<3, 3>(3, 0).copy_from(
            &(self.d_vel_d_bg() - r1 * hat(&next.delta_v) * jr1 + r1 * next.d_vel_d_bg()),
        );
        jac.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(self.d_vel_d_ba() + r1 * next.d_vel_d_ba()));
        jac.fixed_view_mut::<3, 3>(6, 0).copy_from(
            &(self.d_pos_d_bg() + self.d_vel_d_bg() * dt2 - r1 * hat(&next.delta_p) * jr1
                + r1 * next.d_pos_d_bg()),
        );
        jac.fixed_view_mut::<3, 3>(6, 3).copy_from(
            &(self.d_pos_d_ba() + self.d_vel_d_ba() * dt2 + r1 * next.d_pos_d_ba()),
        );

        PreintegratedImu {
            delta_r: self.delta_r * next.delta_r,
            delta_v: self.delta_v + r1 * next.delta_v,
            delta_p: self.delta_p + self.delta_v * dt2 + r1 * next.delta_p,
            dt_total: self.dt_total + dt2,
            bias_linearization: self.bias_linearization,
            covariance: 0.5 * (cov + cov.transpose()),
            bias_jacobian: jac,
        }
    }
}

/// Preintegrates a batch of samples. Each sample is held until the next
/// sample's timestamp; the last one is held until `end_t` (nanoseconds).
pub fn preintegrate(
    samples: &[ImuSample],
    end_t: i64,
    bias: &ImuBias,
    noise: &ImuNoiseSpec,
) -> Result<PreintegratedImu, SensorError> {
    if samples.is_empty() {
        return Err(SensorError::EmptyBatch);
    }
    let mut out = PreintegratedImu::identity(*bias);
    for (i, s) in samples.iter().enumerate() {
        let next_t = samples.get(i + 1).map_or(end_t, |n| n.t);
        if next_t <= s.t {
            return Err(SensorError::NonMonotonicTimestamps { previous: s.t, next: next_t });
        }
        let dt_ns = next_t - s.t;
        if dt_ns > MAX_NOMINAL_INTERVAL_NS {
            log::warn!("IMU interval of {} ms at t={} ns", dt_ns as f64 * 1e-6, s.t);
        }
        out.integrate(&s.gyro, &s.accel, dt_ns as f64 / NS_PER_S, noise);
    }
    Ok(out)
}

/// Predicts the state at the end of the batch from `state_i`.
pub fn predict(state_i: &NavState, delta: &PreintegratedImu, gravity: &Vec3) -> NavState {
    let (dr, dv, dp) = delta.corrected(&state_i.bias);
    let dt = delta.dt_total;
    let r_i = state_i.pose.rotation;
    let p_i = state_i.pose.translation;
    let v_i = state_i.velocity;
    NavState {
        pose: Pose::new(
            r_i * dr,
            p_i + v_i * dt + 0.5 * gravity * dt * dt + r_i.rotate(&dp),
        ),
        velocity: v_i + gravity * dt + r_i.rotate(&dv),
        bias: state_i.bias,
    }
}

/// Residual of state `j` against the prediction from state `i`, ordered
/// (rotation, velocity, position) and expressed in the frame of state `i`.
/// Zero when `state_j == predict(state_i, delta)`.
pub fn imu_residual(
    state_i: &NavState,
    state_j: &NavState,
    delta: &PreintegratedImu,
    gravity: &Vec3,
) -> Vector9 {
    let (dr, dv, dp) = delta.corrected(&state_i.bias);
    let dt = delta.dt_total;
    let r_i = state_i.pose.rotation;
    let rot_err = (dr.inverse() * r_i.inverse() * state_j.pose.rotation).log();
    let vel_err = r_i.inverse_rotate(&(state_j.velocity - state_i.velocity - gravity * dt)) - dv;
    let pos_err = r_i.inverse_rotate(
        &(state_j.pose.translation
            - state_i.pose.translation
            - state_i.velocity * dt
            - 0.5 * gravity * dt * dt),
    ) - dp;
    let mut r = Vector9::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&rot_err);
    r.fixed_rows_mut::<3>(3).copy_from(&vel_err);
    r.fixed_rows_mut::<3>(6).copy_from(&pos_err);
    r
}

/// Bias random-walk residual `(b_g,j − b_g,i, b_a,j − b_a,i)`.
pub fn bias_walk_residual(state_i: &NavState, state_j: &NavState) -> SVector<f64, 6> {
    let mut r = SVector::<f64, 6>::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&(state_j.bias.gyro - state_i.bias.gyro));
    r.fixed_rows_mut::<3>(3).copy_from(&(state_j.bias.accel - state_i.bias.accel));
    r
}

/// Analytic Jacobians of [`imu_residual`] stacked with the bias random walk
/// (15 rows) with respect to the 15-dimensional tangents of both states.
pub fn imu_residual_jacobians(
    state_i: &NavState,
    state_j: &NavState,
    delta: &PreintegratedImu,
    gravity: &Vec3,
) -> (SVector<f64, 15>, SMatrix<f64, 15, 15>, SMatrix<f64, 15, 15>) {
    use super::nav::{TAN_BA, TAN_BG, TAN_POS, TAN_ROT, TAN_VEL};

    let r9 = imu_residual(state_i, state_j, delta, gravity);
    let dt = delta.dt_total;
    let ri = state_i.pose.rotation.matrix();
    let rj = state_j.pose.rotation.matrix();
    let rit = ri.transpose();
    let rot_err = r9.fixed_rows::<3>(0).into_owned();
    let jr_inv = so3_right_jacobian_inv(&rot_err);
    let dbg = state_i.bias.gyro - delta.bias_linearization.gyro;
    let c = delta.d_rot_d_bg() * dbg;
    let exp_err_t = Rotation::exp(&rot_err).matrix().transpose();

    let vel_term = rit * (state_j.velocity - state_i.velocity - gravity * dt);
    let pos_term = rit
        * (state_j.pose.translation
            - state_i.pose.translation
            - state_i.velocity * dt
            - 0.5 * gravity * dt * dt);

    let mut ji = SMatrix::<f64, 15, 15>::zeros();
    let mut jj = SMatrix::<f64, 15, 15>::zeros();
    let put = |m: &mut SMatrix<f64, 15, 15>, row: usize, col: usize, b: Mat3| {
        m.fixed_view_mut::<3, 3>(row, col).copy_from(&b);
    };
    // rotation rows
    put(&mut ji, 0, TAN_ROT, -jr_inv * rj.transpose() * ri);
    put(
        &mut ji,
        0,
        TAN_BG,
        -jr_inv * exp_err_t * so3_right_jacobian(&c) * delta.d_rot_d_bg(),
    );
    put(&mut jj, 0, TAN_ROT, jr_inv);
    // velocity rows
    put(&mut ji, 3, TAN_ROT, hat(&vel_term));
    put(&mut ji, 3, TAN_VEL, -rit);
    put(&mut ji, 3, TAN_BG, -delta.d_vel_d_bg());
    put(&mut ji, 3, TAN_BA, -delta.d_vel_d_ba());
    put(&mut jj, 3, TAN_VEL, rit);
    // position rows
    put(&mut ji, 6, TAN_ROT, hat(&pos_term));
    put(&mut ji, 6, TAN_POS, -Mat3::identity());
    put(&mut ji, 6, TAN_VEL, -rit * dt);
    put(&mut ji, 6, TAN_BG, -delta.d_pos_d_bg());
    put(&mut ji, 6, TAN_BA, -delta.d_pos_d_ba());
    put(&mut jj, 6, TAN_POS, rit * rj);
    // bias random walk
    put(&mut ji, 9, TAN_BG, -Mat3::identity());
    put(&mut ji, 12, TAN_BA, -Mat3::identity());
    put(&mut jj, 9, TAN_BG, Mat3::identity());
    put(&mut jj, 12, TAN_BA, Mat3::identity());

    let mut r = SVector::<f64, 15>::zeros();
    r.fixed_rows_mut::<9>(0).copy_from(&r9);
    r.fixed_rows_mut::<6>(9).copy_from(&bias_walk_residual(state_i, state_j));
    (r, ji, jj)
}
