//! Noisy sensor logs from a ground-truth trajectory.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::trajectory::{true_imu, truth_at, TimedState};
use super::world::World;
use super::{
    SimError, STREAM_BIAS, STREAM_CAMERA, STREAM_DEPTH, STREAM_DVL, STREAM_IMU, STREAM_INIT,
    STREAM_JITTER, STREAM_REASSOCIATION,
};
use crate::geometry::{CameraIntrinsics, Pose, Rotation, Vec3};
use crate::io::{sort_records, CalibrationFile, LogRecord, Observation, Payload};
use crate::sensors::{
    DepthSample, DvlSample, ImuBias, ImuNoiseSpec, ImuSample, DEFAULT_DEPTH_SIGMA, DEFAULT_DVL_SIGMA,
};

/// Meters; beyond this the water is too hazy to see a landmark.
pub const DEFAULT_MAX_RANGE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorRates {
    pub imu_hz: u32,
    pub camera_hz: f64,
    pub dvl_hz: f64,
    pub depth_hz: f64,
}

impl Default for SensorRates {
    fn default() -> Self {
        Self {
            imu_hz: 500,
            camera_hz: 30.0,
            dvl_hz: 7.0,
            depth_hz: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimNoise {
    pub imu: ImuNoiseSpec,
    /// Standard deviation of the initial gyro bias, rad/s.
    pub initial_gyro_bias: f64,
    /// Standard deviation of the initial accelerometer bias, m/s².
    pub initial_accel_bias: f64,
    pub dvl_sigma: f64,
    pub depth_sigma: f64,
    pub pixel_sigma: f64,
    /// Uniform timestamp jitter bound for DVL and depth records, ns.
    pub jitter_ns: i64,
}

impl Default for SimNoise {
    fn default() -> Self {
        Self {
            imu: ImuNoiseSpec::default(),
            initial_gyro_bias: 1e-3,
            initial_accel_bias: 0.02,
            dvl_sigma: DEFAULT_DVL_SIGMA,
            depth_sigma: DEFAULT_DEPTH_SIGMA,
            pixel_sigma: 1.0,
            jitter_ns: 0,
        }
    }
}

impl SimNoise {
    pub fn zero() -> Self {
        Self {
            imu: ImuNoiseSpec {
                gyro_noise_density: 0.0,
                accel_noise_density: 0.0,
                gyro_bias_random_walk: 0.0,
                accel_bias_random_walk: 0.0,
            },
            initial_gyro_bias: 0.0,
            initial_accel_bias: 0.0,
            dvl_sigma: 0.0,
            depth_sigma: 0.0,
            pixel_sigma: 0.0,
            jitter_ns: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blackout {
    /// Seconds.
    pub start: f64,
    pub end: f64,
    /// Probability that a landmark seen again after the blackout keeps its
    /// track id.
    pub recognition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationSchedule {
    pub blackouts: Vec<Blackout>,
    /// A landmark unseen for longer than this (seconds) is a revisit.
    pub revisit_gap: f64,
    /// Recognition probability for revisits outside blackouts.
    pub revisit_recognition: f64,
    pub max_range: f64,
}

impl Default for DegradationSchedule {
    fn default() -> Self {
        Self {
            blackouts: Vec::new(),
            revisit_gap: 3.0,
            revisit_recognition: 1.0,
            max_range: DEFAULT_MAX_RANGE,
        }
    }
}

impl DegradationSchedule {
    pub fn validate(&self, duration: f64) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        let mut sorted = self.blackouts.clone();
        sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
        for (i, b) in sorted.iter().enumerate() {
            if !(b.start >= 0.0 && b.end > b.start && b.end <= duration) {
                return bad(format!("blackout [{}, {}] outside [0, {duration}]", b.start, b.end));
            }
            if !(0.0..=1.0).contains(&b.recognition) {
                return bad(format!("recognition probability {} outside [0, 1]", b.recognition));
            }
            if i > 0 && b.start < sorted[i - 1].end {
                return bad("blackouts overlap".into());
            }
        }
        if !(0.0..=1.0).contains(&self.revisit_recognition) {
            return bad("revisit recognition outside [0, 1]".into());
        }
        if !(self.max_range > 0.0) || !(self.revisit_gap > 0.0) {
            return bad("max range and revisit gap must be positive".into());
        }
        Ok(())
    }

    fn blackout_at(&self, t: i64) -> bool {
        self.blackouts.iter().any(|b| {
            let (s, e) = (secs_to_ns(b.start), secs_to_ns(b.end));
            t >= s && t < e
        })
    }

    /// Recognition probability of the most recent blackout lying between
    /// two sightings, if any.
    fn blackout_between(&self, from: i64, to: i64) -> Option<f64> {
        self.blackouts
            .iter()
            .filter(|b| secs_to_ns(b.end) > from && secs_to_ns(b.start) < to)
            .max_by(|a, b| a.end.total_cmp(&b.end))
            .map(|b| b.recognition)
    }
}

fn secs_to_ns(s: f64) -> i64 {
    (s * 1e9).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReassociationEvent {
    pub t: i64,
    pub landmark: usize,
    pub track_id: u64,
    pub retained: bool,
    pub after_blackout: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReassociationRecord {
    pub events: Vec<ReassociationEvent>,
    /// Track id → (landmark, time of first emission).
    pub tracks: BTreeMap<u64, (usize, i64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    /// Ground truth at the IMU rate, biases included.
    pub truth: Vec<TimedState>,
    pub log: Vec<LogRecord>,
    pub world: World,
    pub reassociation: ReassociationRecord,
    pub duration_ns: i64,
}

/// Track ids emitted up to `t` (ns) and the landmark each belongs to.
pub fn reassociation_oracle(sim: &SimOutput, t: i64) -> BTreeMap<u64, usize> {
    sim.reassociation
        .tracks
        .iter()
        .filter(|(_, (_, first))| *first <= t)
        .map(|(&track, &(landmark, _))| (track, landmark))
        .collect()
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gauss3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(gauss(rng), gauss(rng), gauss(rng))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Timestamps `round(k / hz)` seconds strictly before `end`.
fn ticks(hz: f64, end: i64) -> impl Iterator<Item = i64> {
    (0..)
        .map(move |k: i64| (k as f64 * 1e9 / hz).round() as i64)
        .take_while(move |&t| t < end)
}

/// Camera-frame position and pixel of a landmark, if the camera can see it.
pub(crate) fn observe(
    landmark: &super::Landmark,
    camera_to_world: &Pose,
    intrinsics: &CameraIntrinsics,
    max_range: f64,
) -> Option<(Vec3, Vector2<f64>)> {
    let pc = camera_to_world.inverse_transform_point(&landmark.position);
    if pc.z <= 0.0 || pc.norm() > max_range {
        return None;
    }
    if landmark.normal.dot(&(camera_to_world.translation - landmark.position)) <= 0.0 {
        return None;
    }
    let px = intrinsics.project(&pc).ok()?;
    intrinsics.contains(&px).then_some((pc, px))
}

pub fn synthesize_log(
    traj: &[TimedState],
    world: &World,
    calib: &CalibrationFile,
    noise: &SimNoise,
    rates: &SensorRates,
    schedule: &DegradationSchedule,
    seed: u64,
) -> Result<SimOutput, SimError> {
    if traj.is_empty() {
        return Err(SimError::InvalidSpec("empty trajectory".into()));
    }
    let positive = |x: f64| x.is_finite() && x > 0.0;
    if rates.imu_hz == 0 || !positive(rates.camera_hz) || !positive(rates.dvl_hz) || !positive(rates.depth_hz) {
        return Err(SimError::InvalidRates(format!("{rates:?}")));
    }
    if traj.len() > 1 {
        let period = traj[1].t - traj[0].t;
        if period * rates.imu_hz as i64 != 1_000_000_000 {
            return Err(SimError::InvalidRates(format!(
                "IMU rate {} Hz does not match the {period} ns ground-truth spacing",
                rates.imu_hz
            )));
        }
    }
    let duration_ns = traj.last().unwrap().t;
    schedule.validate(duration_ns as f64 * 1e-9)?;

    let mut truth = traj.to_vec();
    let mut log = Vec::new();

    // IMU with bias random walk.
    let mut rng_bias = stream(seed, STREAM_BIAS);
    let mut rng_imu = stream(seed, STREAM_IMU);
    let mut bias = ImuBias {
        gyro: gauss3(&mut rng_bias) * noise.initial_gyro_bias,
        accel: gauss3(&mut rng_bias) * noise.initial_accel_bias,
    };
    for k in 0..truth.len() {
        truth[k].state.bias = bias;
        if k + 1 == truth.len() {
            break;
        }
        let dt = (truth[k + 1].t - truth[k].t) as f64 * 1e-9;
        let (omega, force) = true_imu(&truth[k].state, &truth[k + 1].state, dt);
        let s = ImuSample {
            t: truth[k].t,
            gyro: omega + bias.gyro + gauss3(&mut rng_imu) * (noise.imu.gyro_noise_density / dt.sqrt()),
            accel: force + bias.accel + gauss3(&mut rng_imu) * (noise.imu.accel_noise_density / dt.sqrt()),
        };
        log.push(LogRecord::imu(&s));
        bias.gyro += gauss3(&mut rng_bias) * (noise.imu.gyro_bias_random_walk * dt.sqrt());
        bias.accel += gauss3(&mut rng_bias) * (noise.imu.accel_bias_random_walk * dt.sqrt());
    }

    let mut rng_jitter = stream(seed, STREAM_JITTER);
    let mut jitter = |t: i64| -> i64 {
        if noise.jitter_ns > 0 {
            (t + rng_jitter.random_range(-noise.jitter_ns..=noise.jitter_ns)).clamp(0, duration_ns)
        } else {
            t
        }
    };

    let mut rng_dvl = stream(seed, STREAM_DVL);
    for t in ticks(rates.dvl_hz, duration_ns) {
        let (state, omega) = truth_at(&truth, t);
        let v_body = state.pose.rotation.inverse_rotate(&state.velocity)
            + omega.cross(&calib.dvl_extrinsic.translation);
        let v = calib.dvl_extrinsic.rotation.inverse_rotate(&v_body) + gauss3(&mut rng_dvl) * noise.dvl_sigma;
        log.push(LogRecord::dvl(&DvlSample {
            t: jitter(t),
            velocity_body: v,
            valid: [true; 3],
        }));
    }

    let mut rng_depth = stream(seed, STREAM_DEPTH);
    for t in ticks(rates.depth_hz, duration_ns) {
        let (state, _) = truth_at(&truth, t);
        log.push(LogRecord::depth(&DepthSample {
            t: jitter(t),
            depth: state.pose.translation.z + gauss(&mut rng_depth) * noise.depth_sigma,
        }));
    }

    let mut rng_cam = stream(seed, STREAM_CAMERA);
    let mut rng_assoc = stream(seed, STREAM_REASSOCIATION);
    let gap = secs_to_ns(schedule.revisit_gap);
    let mut last_seen: Vec<Option<i64>> = vec![None; world.landmarks.len()];
    let mut current_track: Vec<u64> = (0..world.landmarks.len() as u64).collect();
    let mut next_fresh = world.landmarks.len() as u64;
    let mut record = ReassociationRecord::default();
    for t in ticks(rates.camera_hz, duration_ns) {
        if schedule.blackout_at(t) {
            continue;
        }
        let (state, _) = truth_at(&truth, t);
        for cam in calib.rig.cameras() {
            let camera_to_world = state.pose * cam.extrinsic;
            let mut observations = Vec::new();
            for lm in &world.landmarks {
                let Some((_, px)) = observe(lm, &camera_to_world, &cam.intrinsics, schedule.max_range) else {
                    continue;
                };
                let px = px + Vector2::new(gauss(&mut rng_cam), gauss(&mut rng_cam)) * noise.pixel_sigma;
                if !cam.intrinsics.contains(&px) {
                    continue;
                }
                let id = lm.id;
                match last_seen[id] {
                    None => {
                        record.tracks.insert(current_track[id], (id, t));
                    }
                    Some(prev) => {
                        let blackout = schedule.blackout_between(prev, t);
                        if t - prev > gap || blackout.is_some() {
                            let p = blackout.unwrap_or(schedule.revisit_recognition);
                            let retained = rng_assoc.random_bool(p);
                            let track = if retained {
                                id as u64
                            } else {
                                next_fresh += 1;
                                next_fresh - 1
                            };
                            current_track[id] = track;
                            record.tracks.entry(track).or_insert((id, t));
                            record.events.push(ReassociationEvent {
                                t,
                                landmark: id,
                                track_id: track,
                                retained,
                                after_blackout: blackout.is_some(),
                            });
                        }
                    }
                }
                last_seen[id] = Some(t);
                observations.push(Observation {
                    track_id: current_track[id],
                    u: px.x,
                    v: px.y,
                });
            }
            log.push(LogRecord {
                t,
                payload: Payload::Camera {
                    camera_id: cam.id,
                    observations,
                },
            });
        }
    }

    sort_records(&mut log);
    Ok(SimOutput {
        truth,
        log,
        world: world.clone(),
        reassociation: record,
        duration_ns,
    })
}

/// Stand-in for a visual front-end: ground-truth poses at `times`, each
/// except the first perturbed by isotropic Gaussian noise of `sigma_pos`
/// meters and `sigma_rot` radians per axis.
pub fn frontend_init(
    truth: &[TimedState],
    times: &[i64],
    sigma_pos: f64,
    sigma_rot: f64,
    seed: u64,
) -> Vec<(i64, Pose)> {
    let mut rng = stream(seed, STREAM_INIT);
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let pose = truth_at(truth, t).0.pose;
            if k == 0 {
                return (t, pose);
            }
            let dp = gauss3(&mut rng) * sigma_pos;
            let dr = gauss3(&mut rng) * sigma_rot;
            (
                t,
                Pose::new(pose.rotation * Rotation::exp(&dr), pose.translation + dp),
            )
        })
        .collect()
}
