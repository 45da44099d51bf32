//! Binding of time-stamped sensor records to estimator states.

use serde::Serialize;

use super::{LogRecord, Observation, Payload};
use crate::geometry::{CameraId, Vec3};
use crate::sensors::{DepthSample, DvlSample, ImuSample};

pub const DEFAULT_TOLERANCE_NS: i64 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuBatchSample {
    pub sample: ImuSample,
    /// Interpolated to a state time rather than read from the log.
    pub synthetic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvlBinding {
    pub sample: DvlSample,
    /// Gyro reading in force at the DVL timestamp, if any IMU data covers it.
    pub gyro: Option<Vec3>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateBundle {
    pub t: i64,
    /// Samples covering `[t, t_next)`; empty for the last state.
    pub imu: Vec<ImuBatchSample>,
    pub dvl: Vec<DvlBinding>,
    pub depth: Vec<DepthSample>,
    pub camera: Vec<(CameraId, Vec<Observation>)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AssociationReport {
    pub imu_in: usize,
    pub imu_synthetic: usize,
    /// Samples placed in a batch, synthetic ones included.
    pub imu_batched: usize,
    /// Samples before the first or after the last state.
    pub imu_unassociated: usize,
    pub dvl_unassociated: usize,
    pub depth_unassociated: usize,
    pub camera_unassociated: usize,
}

impl AssociationReport {
    /// `in + synthetic − out`, which is zero when no IMU sample was lost.
    pub fn imu_balance(&self) -> i64 {
        self.imu_in as i64 + self.imu_synthetic as i64
            - self.imu_batched as i64
            - self.imu_unassociated as i64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    pub bundles: Vec<StateBundle>,
    pub report: AssociationReport,
}

/// Index of the state nearest to `t` within `tolerance`, ties to the
/// earlier state.
fn nearest_state(states: &[i64], t: i64, tolerance: i64) -> Option<usize> {
    let after = states.partition_point(|&s| s < t);
    let mut best: Option<(i64, usize)> = None;
    for i in [after.checked_sub(1), Some(after)].into_iter().flatten() {
        if let Some(&s) = states.get(i) {
            let d = (s - t).abs();
            if d <= tolerance && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
    }
    best.map(|(_, i)| i)
}

fn lerp_sample(a: &ImuSample, b: &ImuSample, t: i64) -> ImuSample {
    let f = (t - a.t) as f64 / (b.t - a.t) as f64;
    ImuSample {
        t,
        gyro: a.gyro + (b.gyro - a.gyro) * f,
        accel: a.accel + (b.accel - a.accel) * f,
    }
}

/// Records and states must be sorted by time; states strictly increasing.
pub fn associate(records: &[LogRecord], states: &[i64], tolerance_ns: i64) -> Association {
    let mut bundles: Vec<StateBundle> = states
        .iter()
        .map(|&t| StateBundle {
            t,
            ..Default::default()
        })
        .collect();
    let mut report = AssociationReport::default();
    let imu: Vec<ImuSample> = records.iter().filter_map(LogRecord::as_imu).collect();
    report.imu_in = imu.len();

    if states.is_empty() {
        report.imu_unassociated = imu.len();
    } else {
        let first = states[0];
        let last = *states.last().unwrap();
        for s in &imu {
            if s.t < first || s.t >= last {
                report.imu_unassociated += 1;
            }
        }
        for (k, w) in states.windows(2).enumerate() {
            let (t0, t1) = (w[0], w[1]);
            let lo = imu.partition_point(|s| s.t < t0);
            let hi = imu.partition_point(|s| s.t < t1);
            let batch = &mut bundles[k].imu;
            let starts_on_time = imu.get(lo).is_some_and(|s| s.t == t0);
            if !starts_on_time && lo > 0 {
                let before = &imu[lo - 1];
                let sample = match imu.get(lo) {
                    Some(after) => lerp_sample(before, after, t0),
                    None => ImuSample { t: t0, ..*before },
                };
                batch.push(ImuBatchSample {
                    sample,
                    synthetic: true,
                });
                report.imu_synthetic += 1;
            }
            for s in &imu[lo..hi] {
                batch.push(ImuBatchSample {
                    sample: *s,
                    synthetic: false,
                });
            }
            report.imu_batched += batch.len();
        }
    }

    let held_gyro = |t: i64| -> Option<Vec3> {
        let i = imu.partition_point(|s| s.t <= t);
        (i > 0).then(|| imu[i - 1].gyro)
    };

    for r in records {
        match &r.payload {
            Payload::Imu { .. } => {}
            Payload::Dvl { .. } => match nearest_state(states, r.t, tolerance_ns) {
                Some(i) => bundles[i].dvl.push(DvlBinding {
                    sample: r.as_dvl().unwrap(),
                    gyro: held_gyro(r.t),
                }),
                None => report.dvl_unassociated += 1,
            },
            Payload::Depth { .. } => match nearest_state(states, r.t, tolerance_ns) {
                Some(i) => bundles[i].depth.push(r.as_depth().unwrap()),
                None => report.depth_unassociated += 1,
            },
            Payload::Camera {
                camera_id,
                observations,
            } => match states.binary_search(&r.t) {
                Ok(i) => bundles[i].camera.push((*camera_id, observations.clone())),
                Err(_) => report.camera_unassociated += 1,
            },
        }
    }
    Association { bundles, report }
}
