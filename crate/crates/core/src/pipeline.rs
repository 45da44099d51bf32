//! From a sensor log to an estimated trajectory: keyframe selection, stream
//! association, landmark initialization, graph assembly and the solve.

use std::collections::BTreeMap;

use log::{debug, info};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pixel_to_ray, triangulate, CameraId, Pose, Rotation, Vec3};
use crate::graph::{
    solve, FactorGraph, FactorKind, GraphError, NoiseModel, SolveOptions, SolveReport, VariableKey,
    EXTRINSIC_PRIOR_SIGMA_M, EXTRINSIC_PRIOR_SIGMA_RAD,
};
use crate::io::{associate, AssociationReport, CalibrationFile, LogRecord, DEFAULT_TOLERANCE_NS};
use crate::sensors::{
    predict, preintegrate, ImuBias, ImuNoiseSpec, ImuSample, NavState, SensorError,
    DEFAULT_DEPTH_SIGMA, DEFAULT_DVL_SIGMA, GRAVITY,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorFlags {
    pub vision: bool,
    pub imu: bool,
    pub dvl: bool,
    pub depth: bool,
}

impl Default for SensorFlags {
    fn default() -> Self {
        Self {
            vision: true,
            imu: true,
            dvl: true,
            depth: true,
        }
    }
}

impl SensorFlags {
    pub fn any(&self) -> bool {
        self.vision || self.imu || self.dvl || self.depth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub sensors: SensorFlags,
    pub keyframe_hz: f64,
    /// DVL and depth association tolerance, ns.
    pub tolerance_ns: i64,
    pub imu_noise: ImuNoiseSpec,
    pub dvl_sigma: f64,
    pub depth_sigma: f64,
    pub pixel_sigma: f64,
    pub optimize_extrinsics: bool,
    /// Translation (m) and rotation (rad) sigmas of the prior that keeps
    /// refined camera extrinsics near the calibration file.
    pub extrinsic_prior_sigmas: [f64; 2],
    /// Observations of a track more than this far apart (ns) mark a revisit,
    /// added as loop-closure re-observations.
    pub revisit_gap_ns: i64,
    /// Prior on the first state: position, rotation, velocity, gyro bias,
    /// accel bias sigmas. Fixes the gauge.
    pub anchor_sigmas: [f64; 5],
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub robust: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sensors: SensorFlags::default(),
            keyframe_hz: 10.0,
            tolerance_ns: DEFAULT_TOLERANCE_NS,
            imu_noise: ImuNoiseSpec::default(),
            dvl_sigma: DEFAULT_DVL_SIGMA,
            depth_sigma: DEFAULT_DEPTH_SIGMA,
            pixel_sigma: 1.0,
            optimize_extrinsics: false,
            extrinsic_prior_sigmas: [EXTRINSIC_PRIOR_SIGMA_M, EXTRINSIC_PRIOR_SIGMA_RAD],
            revisit_gap_ns: 3_000_000_000,
            anchor_sigmas: [1e-4, 1e-4, 1e3, 1e-2, 1e-1],
            max_iterations: 100,
            initial_lambda: 1e-4,
            robust: true,
        }
    }
}

impl PipelineConfig {
    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            max_iterations: self.max_iterations,
            initial_lambda: self.initial_lambda,
            ..SolveOptions::default()
        }
    }
}

/// Starting point for the solver, one entry per keyframe.
#[derive(Debug, Clone, PartialEq)]
pub enum Initialization {
    States(Vec<NavState>),
    /// Velocities come from differencing the poses; biases start at zero.
    Poses(Vec<Pose>),
    /// Strapdown propagation of the IMU, with velocity reset from the DVL
    /// where available, starting level at the origin.
    DeadReckoning,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildReport {
    pub states: usize,
    pub landmarks: usize,
    pub dropped_tracks: usize,
    pub loop_closure_observations: usize,
    pub association: AssociationReport,
    pub census: BTreeMap<&'static str, usize>,
}

#[derive(Debug, Clone)]
pub struct BuiltGraph {
    pub graph: FactorGraph,
    pub times: Vec<i64>,
    /// Landmark variable index → emitted track id.
    pub tracks: BTreeMap<usize, u64>,
    pub report: BuildReport,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub times: Vec<i64>,
    pub states: Vec<NavState>,
    pub landmarks: BTreeMap<u64, Vec3>,
    pub extrinsics: BTreeMap<CameraId, Pose>,
    pub solve: SolveReport,
    pub build: BuildReport,
}

/// Keyframe timestamps on a `1/hz` grid over the span of the log.
pub fn keyframe_times(log: &[LogRecord], hz: f64) -> Vec<i64> {
    let Some(last) = log.last() else {
        return Vec::new();
    };
    let step = (1e9 / hz).round() as i64;
    (0..).map(|k| k * step).take_while(|&t| t <= last.t).collect()
}

/// Half-width, in keyframes, of the window used to difference poses.
const VELOCITY_WINDOW: usize = 5;

fn states_from_poses(times: &[i64], poses: &[Pose]) -> Vec<NavState> {
    let n = poses.len();
    (0..n)
        .map(|k| {
            let velocity = if n < 2 {
                Vec3::zeros()
            } else {
                let a = k.saturating_sub(VELOCITY_WINDOW);
                let b = (k + VELOCITY_WINDOW).min(n - 1);
                let dt = (times[b] - times[a]) as f64 * 1e-9;
                (poses[b].translation - poses[a].translation) / dt
            };
            NavState::new(poses[k], velocity, ImuBias::zero())
        })
        .collect()
}

fn level_rotation(accel: &Vec3) -> Rotation {
    let f = -accel;
    let roll = f.y.atan2(f.z);
    let pitch = (-f.x).atan2((f.y * f.y + f.z * f.z).sqrt());
    Rotation::rot_y(pitch) * Rotation::rot_x(roll)
}

fn dead_reckoning(
    log: &[LogRecord],
    times: &[i64],
    calib: &CalibrationFile,
    cfg: &PipelineConfig,
) -> Result<Vec<NavState>, PipelineError> {
    let assoc = associate(log, times, cfg.tolerance_ns);
    let first_imu = log.iter().find_map(LogRecord::as_imu);
    let rotation = first_imu.map_or(Rotation::identity(), |s| level_rotation(&s.accel));
    let depth0 = log.iter().find_map(LogRecord::as_depth).map_or(0.0, |d| d.depth);
    let mut state = NavState::new(
        Pose::new(rotation, Vec3::new(0.0, 0.0, depth0)),
        Vec3::zeros(),
        ImuBias::zero(),
    );
    let mut out = Vec::with_capacity(times.len());
    for (k, bundle) in assoc.bundles.iter().enumerate() {
        if cfg.sensors.dvl {
            if let Some(d) = bundle.dvl.first() {
                let omega = d.gyro.unwrap_or_else(Vec3::zeros);
                let v_body = calib.dvl_extrinsic.rotation.rotate(&d.sample.velocity_body)
                    - omega.cross(&calib.dvl_extrinsic.translation);
                state.velocity = state.pose.rotation.rotate(&v_body);
            }
        }
        if cfg.sensors.depth {
            if let Some(d) = bundle.depth.first() {
                state.pose.translation.z = d.depth;
            }
        }
        out.push(state);
        if k + 1 < times.len() && !bundle.imu.is_empty() {
            let samples: Vec<ImuSample> = bundle.imu.iter().map(|s| s.sample).collect();
            let delta = preintegrate(&samples, times[k + 1], &state.bias, &cfg.imu_noise)?;
            state = predict(&state, &delta, &GRAVITY);
        }
    }
    Ok(out)
}

/// Assembles the factor graph for `times` (strictly increasing keyframe
/// timestamps) per the sensor flags.
pub fn build_graph(
    log: &[LogRecord],
    calib: &CalibrationFile,
    times: &[i64],
    init: &Initialization,
    cfg: &PipelineConfig,
) -> Result<BuiltGraph, PipelineError> {
    if !cfg.sensors.any() {
        return Err(PipelineError::Config("no sensor enabled".into()));
    }
    if times.is_empty() {
        return Err(PipelineError::Config("no keyframes".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PipelineError::Config("keyframe times must increase".into()));
    }
    let states = match init {
        Initialization::States(s) => s.clone(),
        Initialization::Poses(p) => states_from_poses(times, p),
        Initialization::DeadReckoning => dead_reckoning(log, times, calib, cfg)?,
    };
    if states.len() != times.len() {
        return Err(PipelineError::Config(format!(
            "{} initial states for {} keyframes",
            states.len(),
            times.len()
        )));
    }

    let assoc = associate(log, times, cfg.tolerance_ns);
    let mut graph = FactorGraph::new();
    for (k, s) in states.iter().enumerate() {
        graph.insert_nav(k, *s);
    }
    for cam in calib.rig.cameras() {
        graph.insert_camera(cam.id, cam.intrinsics, cam.extrinsic);
    }
    graph.add_nav_prior(0, states[0], cfg.anchor_sigmas)?;

    // Without an inertial chain the velocity and bias blocks of each state
    // need something to hold them.
    if !cfg.sensors.imu {
        let vel = if cfg.sensors.dvl { 1e3 } else { 1.0 };
        for (k, s) in states.iter().enumerate().skip(1) {
            graph.add_nav_prior(k, *s, [1e6, 1e6, vel, 1.0, 1.0])?;
        }
    }

    for (k, bundle) in assoc.bundles.iter().enumerate() {
        if cfg.sensors.imu && k + 1 < times.len() {
            if bundle.imu.is_empty() {
                return Err(PipelineError::Config(format!(
                    "no IMU data between keyframes {k} and {}",
                    k + 1
                )));
            }
            let samples: Vec<ImuSample> = bundle.imu.iter().map(|s| s.sample).collect();
            let delta = preintegrate(&samples, times[k + 1], &states[k].bias, &cfg.imu_noise)?;
            graph.add_imu(k, k + 1, delta, &cfg.imu_noise)?;
        }
        if cfg.sensors.dvl {
            for d in &bundle.dvl {
                let gyro = d.gyro.unwrap_or_else(Vec3::zeros);
                graph.add_dvl(k, d.sample, gyro, calib.dvl_extrinsic, cfg.dvl_sigma)?;
            }
        }
        if cfg.sensors.depth {
            for d in &bundle.depth {
                graph.add_depth(k, *d, cfg.depth_sigma)?;
            }
        }
    }

    let mut tracks_out = BTreeMap::new();
    let mut dropped = 0;
    let mut closures = 0;
    if cfg.sensors.vision {
        // track → observations (state, camera, pixel) in time order
        let mut tracks: BTreeMap<u64, Vec<(usize, CameraId, Vector2<f64>)>> = BTreeMap::new();
        for (k, bundle) in assoc.bundles.iter().enumerate() {
            for (cam, obs) in &bundle.camera {
                for o in obs {
                    tracks.entry(o.track_id).or_default().push((k, *cam, Vector2::new(o.u, o.v)));
                }
            }
        }
        let mut revisits = Vec::new();
        for (track, obs) in &tracks {
            let distinct = {
                let mut ks: Vec<usize> = obs.iter().map(|o| o.0).collect();
                ks.dedup();
                ks.len()
            };
            let Some(point) = (distinct >= 2)
                .then(|| initial_landmark(obs, &states, calib))
                .flatten()
            else {
                dropped += 1;
                continue;
            };
            let index = tracks_out.len();
            graph.insert_landmark(index, point);
            tracks_out.insert(index, *track);
            let mut previous: Option<usize> = None;
            for &(k, cam, px) in obs {
                let revisit = previous.is_some_and(|p| times[k] - times[p] > cfg.revisit_gap_ns);
                if revisit {
                    revisits.push((k, cam, index, px));
                } else {
                    graph.add_reprojection(k, cam, index, px, cfg.pixel_sigma)?;
                }
                previous = Some(k);
            }
        }
        closures = graph.add_loop_closure_observations(&revisits, cfg.pixel_sigma)?;
        if !cfg.robust {
            for f in &mut graph.factors {
                f.loss = crate::graph::RobustLoss::None;
            }
        }
    }

    if cfg.optimize_extrinsics && cfg.sensors.vision {
        let enabled = calib.rig.cameras().iter().map(|c| (c.id, true)).collect();
        graph.optimize_extrinsics_toggle(&enabled);
        let [sm, sr] = cfg.extrinsic_prior_sigmas;
        for f in &mut graph.factors {
            if matches!(f.kind, FactorKind::PriorPose(_)) && matches!(f.keys[0], VariableKey::Extrinsic(_)) {
                f.noise = NoiseModel::diagonal(&[sm, sm, sm, sr, sr, sr]);
            }
        }
    }

    let report = BuildReport {
        states: times.len(),
        landmarks: tracks_out.len(),
        dropped_tracks: dropped,
        loop_closure_observations: closures,
        association: assoc.report,
        census: graph.factor_census(),
    };
    debug!("built graph: {report:?}");
    Ok(BuiltGraph {
        graph,
        times: times.to_vec(),
        tracks: tracks_out,
        report,
    })
}

/// Farthest plausible landmark, in meters from any observing camera.
const MAX_LANDMARK_RANGE: f64 = 100.0;

fn initial_landmark(
    obs: &[(usize, CameraId, Vector2<f64>)],
    states: &[NavState],
    calib: &CalibrationFile,
) -> Option<Vec3> {
    let rays: Vec<_> = obs
        .iter()
        .filter_map(|(k, cam, px)| Some((pixel_to_ray(&calib.rig, *cam, px).ok()?, states[*k].pose)))
        .collect();
    let point = triangulate(&rays).ok()?;
    let in_front = obs.iter().all(|(k, cam, _)| {
        let c = calib.rig.camera(*cam).expect("ray built above");
        let pc = (states[*k].pose * c.extrinsic).inverse_transform_point(&point);
        pc.z > 0.05 && pc.norm() < MAX_LANDMARK_RANGE
    });
    in_front.then_some(point)
}

pub fn estimate(
    log: &[LogRecord],
    calib: &CalibrationFile,
    times: &[i64],
    init: &Initialization,
    cfg: &PipelineConfig,
) -> Result<Estimate, PipelineError> {
    let built = build_graph(log, calib, times, init, cfg)?;
    info!(
        "solving {} states, {} landmarks, {} factors",
        built.report.states,
        built.report.landmarks,
        built.graph.factors.len()
    );
    let report = solve(&built.graph, &cfg.solve_options())?;
    info!(
        "cost {:.6e} -> {:.6e} in {} iterations ({:?})",
        report.initial_cost, report.final_cost, report.iterations, report.termination
    );
    let states = (0..times.len()).map(|k| report.values.navs[&k]).collect();
    let landmarks = built
        .tracks
        .iter()
        .map(|(i, track)| (*track, report.values.landmarks[i]))
        .collect();
    let extrinsics = report.values.extrinsics.clone();
    Ok(Estimate {
        times: built.times,
        states,
        landmarks,
        extrinsics,
        solve: report,
        build: built.report,
    })
}
