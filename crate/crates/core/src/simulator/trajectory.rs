//! Smooth survey paths sampled at the IMU rate.
//!
//! Velocity and heading are analytic along the path; positions are the
//! trapezoid integral of the sampled velocities, which makes a left-Riemann
//! IMU model driven by [`true_imu`] reproduce the sampled states exactly.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{Pose, Rotation, Vec3};
use crate::sensors::{ImuBias, NavState, GRAVITY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pattern {
    /// Circles around `center` (a seabed point, z = its depth), one loop per
    /// radius, flown at altitudes spread over `altitude_range` above it.
    /// Heading turns to starboard so the center stays on the right.
    ConcentricCircles {
        center: Vec3,
        radii: Vec<f64>,
        altitude_range: [f64; 2],
    },
    /// Parallel north-going and south-going lanes starting at `origin`,
    /// `extent[0]` long and covering at least `extent[1]` to the east (the
    /// lane count is rounded up to even), closed by a return leg.
    Lawnmower {
        origin: Vec3,
        extent: [f64; 2],
        spacing: f64,
    },
    /// Closed periodic cubic B-spline with the waypoints as control points.
    ReturnLoop { waypoints: Vec<Vec3> },
}

fn default_sample_hz() -> u32 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySpec {
    pub pattern: Pattern,
    /// m/s along the path.
    pub speed: f64,
    /// Seconds.
    pub duration: f64,
    pub seed: u64,
    /// Ground-truth sampling rate; also the IMU rate.
    #[serde(default = "default_sample_hz")]
    pub sample_hz: u32,
    /// Amplitude (rad) of slow roll/pitch oscillations; zero keeps the
    /// vehicle level.
    #[serde(default)]
    pub attitude_amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedState {
    pub t: i64,
    pub state: NavState,
}

impl SurveySpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidSpec(m.to_string()));
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return bad("duration must be finite and non-negative");
        }
        if !(self.speed.is_finite() && self.speed >= 0.0) {
            return bad("speed must be finite and non-negative");
        }
        if self.sample_hz == 0 || 1_000_000_000 % self.sample_hz != 0 {
            return bad("sample rate must divide one second in nanoseconds");
        }
        if !self.attitude_amplitude.is_finite() {
            return bad("attitude amplitude must be finite");
        }
        match &self.pattern {
            Pattern::ConcentricCircles {
                center,
                radii,
                altitude_range,
            } => {
                if radii.is_empty() || radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                    return bad("radii must be positive");
                }
                if !center.iter().chain(altitude_range).all(|x| x.is_finite()) {
                    return bad("non-finite circle parameters");
                }
            }
            Pattern::Lawnmower {
                origin,
                extent,
                spacing,
            } => {
                if !(extent[0] > 0.0 && extent[1] >= 0.0 && *spacing > 0.0) {
                    return bad("lawnmower extent and spacing must be positive");
                }
                if !origin.iter().all(|x| x.is_finite()) {
                    return bad("non-finite lawnmower origin");
                }
            }
            Pattern::ReturnLoop { waypoints } => {
                if waypoints.is_empty() {
                    return bad("return loop needs at least one waypoint");
                }
                if waypoints.iter().any(|w| !w.iter().all(|x| x.is_finite())) {
                    return bad("non-finite waypoint");
                }
            }
        }
        Ok(())
    }

    pub fn period_ns(&self) -> i64 {
        1_000_000_000 / self.sample_hz as i64
    }
}

/// Quintic smoothstep and its derivative; C² at both ends.
fn smoothstep(x: f64) -> (f64, f64) {
    if x <= 0.0 {
        (0.0, 0.0)
    } else if x >= 1.0 {
        (1.0, 0.0)
    } else {
        let x2 = x * x;
        (
            x2 * x * (10.0 - 15.0 * x + 6.0 * x2),
            30.0 * x2 * (1.0 - 2.0 * x + x2),
        )
    }
}

/// A geometric path `P(s)` with its parameter derivative.
enum Path {
    Circles {
        center: Vec3,
        radii: Vec<f64>,
        depths: Vec<f64>,
    },
    Spline { control: Vec<Vec3> },
}

/// Angle over which one circle blends into the next.
const CIRCLE_BLEND: f64 = PI / 2.0;

impl Path {
    fn from_pattern(p: &Pattern) -> Self {
        match p {
            Pattern::ConcentricCircles {
                center,
                radii,
                altitude_range,
            } => {
                let n = radii.len();
                let depths = (0..n)
                    .map(|k| {
                        let f = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
                        center.z - (altitude_range[0] + f * (altitude_range[1] - altitude_range[0]))
                    })
                    .collect();
                Path::Circles {
                    center: *center,
                    radii: radii.clone(),
                    depths,
                }
            }
            Pattern::Lawnmower {
                origin,
                extent,
                spacing,
            } => {
                // An even lane count ends the last lane on the origin side,
                // so the return leg never retraces a lane.
                let lanes = ((extent[1] / spacing).floor() as usize + 1).next_multiple_of(2);
                let mut control = Vec::new();
                for i in 0..lanes {
                    let y = origin.y + i as f64 * spacing;
                    let (a, b) = if i % 2 == 0 {
                        (origin.x, origin.x + extent[0])
                    } else {
                        (origin.x + extent[0], origin.x)
                    };
                    control.push(Vec3::new(a, y, origin.z));
                    control.push(Vec3::new(b, y, origin.z));
                }
                // Return leg, offset west of the first lane so the spline
                // does not fold back over it.
                let last = *control.last().unwrap();
                let back_x = origin.x - spacing;
                control.push(Vec3::new(back_x, last.y, origin.z));
                control.push(Vec3::new(back_x, origin.y, origin.z));
                Path::Spline { control }
            }
            Pattern::ReturnLoop { waypoints } => Path::Spline {
                control: waypoints.clone(),
            },
        }
    }

    fn start(&self) -> f64 {
        0.0
    }

    fn eval(&self, s: f64) -> (Vec3, Vec3) {
        match self {
            Path::Circles {
                center,
                radii,
                depths,
            } => {
                let n = radii.len();
                let loop_idx = ((s / TAU).floor().max(0.0) as usize).min(n - 1);
                let (r, dr, z, dz) = if loop_idx + 1 < n {
                    let blend_start = TAU * (loop_idx + 1) as f64 - CIRCLE_BLEND;
                    let (w, dw) = smoothstep((s - blend_start) / CIRCLE_BLEND);
                    let dw = dw / CIRCLE_BLEND;
                    let (r0, r1) = (radii[loop_idx], radii[loop_idx + 1]);
                    let (z0, z1) = (depths[loop_idx], depths[loop_idx + 1]);
                    (r0 + w * (r1 - r0), dw * (r1 - r0), z0 + w * (z1 - z0), dw * (z1 - z0))
                } else {
                    (radii[n - 1], 0.0, depths[n - 1], 0.0)
                };
                let (sn, cs) = s.sin_cos();
                let p = Vec3::new(center.x + r * cs, center.y + r * sn, z);
                let dp = Vec3::new(dr * cs - r * sn, dr * sn + r * cs, dz);
                (p, dp)
            }
            Path::Spline { control } => {
                let n = control.len();
                let u = s.rem_euclid(n as f64);
                let i = (u.floor() as usize).min(n - 1);
                let x = u - i as f64;
                let c = |k: usize| control[(i + k) % n];
                let (x2, x3) = (x * x, x * x * x);
                let b = [
                    (1.0 - x).powi(3) / 6.0,
                    (3.0 * x3 - 6.0 * x2 + 4.0) / 6.0,
                    (-3.0 * x3 + 3.0 * x2 + 3.0 * x + 1.0) / 6.0,
                    x3 / 6.0,
                ];
                let db = [
                    -(1.0 - x).powi(2) / 2.0,
                    (3.0 * x2 - 4.0 * x) / 2.0,
                    (-3.0 * x2 + 2.0 * x + 1.0) / 2.0,
                    x2 / 2.0,
                ];
                let mut p = Vec3::zeros();
                let mut dp = Vec3::zeros();
                for k in 0..4 {
                    p += c(k) * b[k];
                    dp += c(k) * db[k];
                }
                (p, dp)
            }
        }
    }

    /// ds/dt for constant ground speed.
    fn rate(&self, s: f64, speed: f64) -> f64 {
        let norm = self.eval(s).1.norm();
        if norm < 1e-12 {
            0.0
        } else {
            speed / norm
        }
    }
}

fn rk4(path: &Path, s: f64, speed: f64, h: f64) -> f64 {
    let k1 = path.rate(s, speed);
    let k2 = path.rate(s + 0.5 * h * k1, speed);
    let k3 = path.rate(s + 0.5 * h * k2, speed);
    let k4 = path.rate(s + h * k3, speed);
    s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Samples the survey at `sample_hz` over `[0, duration]`, both ends
/// included. Biases are zero; the log synthesizer fills them in.
pub fn generate_trajectory(spec: &SurveySpec) -> Result<Vec<TimedState>, SimError> {
    spec.validate()?;
    let period = spec.period_ns();
    let dt = period as f64 * 1e-9;
    let duration_ns = (spec.duration * 1e9).round() as i64;
    let n = duration_ns / period;
    let path = Path::from_pattern(&spec.pattern);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phase: [f64; 2] = [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)];

    let mut s = path.start();
    let mut yaw = 0.0;
    let mut out: Vec<TimedState> = Vec::with_capacity(n as usize + 1);
    for k in 0..=n {
        let t = k * period;
        let (p_geo, dp) = path.eval(s);
        let v = dp * path.rate(s, spec.speed);
        if v.xy().norm() > 1e-9 {
            yaw = v.y.atan2(v.x);
        }
        let ts = t as f64 * 1e-9;
        let a = spec.attitude_amplitude;
        let roll = a * (TAU * ts / 11.0 + phase[0]).sin();
        let pitch = a * (TAU * ts / 13.0 + phase[1]).sin();
        let rotation = Rotation::rot_z(yaw) * Rotation::rot_y(pitch) * Rotation::rot_x(roll);
        let position = match out.last() {
            None => p_geo,
            Some(prev) => prev.state.pose.translation + 0.5 * (prev.state.velocity + v) * dt,
        };
        out.push(TimedState {
            t,
            state: NavState::new(Pose::new(rotation, position), v, ImuBias::zero()),
        });
        s = rk4(&path, s, spec.speed, dt);
    }
    Ok(out)
}

/// Bias-free body rate and specific force held over `[t_k, t_{k+1})`.
pub fn true_imu(a: &NavState, b: &NavState, dt: f64) -> (Vec3, Vec3) {
    let omega = (a.pose.rotation.inverse() * b.pose.rotation).log() / dt;
    let accel = (b.velocity - a.velocity) / dt;
    let force = a.pose.rotation.inverse_rotate(&(accel - GRAVITY));
    (omega, force)
}

/// Ground truth at an arbitrary time, consistent with piecewise-constant
/// IMU inputs between samples. Returns the state and the body rate in force.
pub fn truth_at(truth: &[TimedState], t: i64) -> (NavState, Vec3) {
    assert!(!truth.is_empty(), "empty ground truth");
    if truth.len() == 1 || t <= truth[0].t {
        let omega = if truth.len() > 1 {
            let dt = (truth[1].t - truth[0].t) as f64 * 1e-9;
            true_imu(&truth[0].state, &truth[1].state, dt).0
        } else {
            Vec3::zeros()
        };
        return (truth[0].state, omega);
    }
    let period = truth[1].t - truth[0].t;
    let last = truth.len() - 1;
    let k = (((t - truth[0].t) / period) as usize).min(last - 1);
    let (a, b) = (&truth[k], &truth[k + 1]);
    let dt = (b.t - a.t) as f64 * 1e-9;
    let (omega, force) = true_imu(&a.state, &b.state, dt);
    let tau = ((t - a.t) as f64 * 1e-9).min(dt);
    let accel = a.state.pose.rotation.rotate(&force) + GRAVITY;
    let rotation = a.state.pose.rotation * Rotation::exp(&(omega * tau));
    let velocity = a.state.velocity + accel * tau;
    let position = a.state.pose.translation + a.state.velocity * tau + 0.5 * accel * tau * tau;
    let bias = a.state.bias;
    (
        NavState::new(Pose::new(rotation, position), velocity, bias),
        omega,
    )
}
