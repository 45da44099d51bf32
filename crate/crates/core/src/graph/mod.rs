//! Factor graph over navigation states, landmarks and rig extrinsics, solved
//! by Levenberg–Marquardt with Schur elimination of the landmarks.

mod check;
mod factors;
mod solver;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, Vector2, Vector6};
use thiserror::Error;

use crate::geometry::{CameraId, CameraIntrinsics, Pose, Rotation, Vec3};
use crate::sensors::{
    DepthSample, DvlSample, ImuNoiseSpec, NavState, PreintegratedImu, GRAVITY,
};

pub use check::{
    factor_jacobian_error, jacobian_self_check, relative_error, FACTOR_KINDS, FD_STEP,
};
pub use factors::{
    huber_weight, linearize, numerical_jacobians, pose_prior_residual, reprojection_jacobians, reprojection_residual,
    robust_cost, Linearized, ReprojectionJacobians,
};
pub use solver::{
    damped_step, solve, IterationRecord, LinearSolver, SolveOptions, SolveReport,
    TerminationReason,
};

/// Variance floor keeping inertial noise models invertible.
const MIN_VARIANCE: f64 = 1e-18;

/// Huber threshold on whitened reprojection residuals.
pub const DEFAULT_HUBER_DELTA: f64 = 1.345;
/// Prior on a rig extrinsic released for refinement.
pub const EXTRINSIC_PRIOR_SIGMA_M: f64 = 0.05;
pub const EXTRINSIC_PRIOR_SIGMA_RAD: f64 = 2.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VariableKey {
    Nav(usize),
    Landmark(usize),
    Extrinsic(CameraId),
}

impl VariableKey {
    pub fn dim(&self) -> usize {
        match self {
            VariableKey::Nav(_) => crate::sensors::NAV_DIM,
            VariableKey::Landmark(_) => 3,
            VariableKey::Extrinsic(_) => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("unknown variable {0:?}")]
    UnknownVariable(VariableKey),
    #[error("unknown landmark {0}")]
    UnknownLandmark(usize),
    #[error("unknown camera {0}")]
    UnknownCamera(CameraId),
    #[error("factor arity mismatch: {0}")]
    Arity(String),
    #[error("invalid residual: {0}")]
    InvalidResidual(String),
    #[error("gauge is not fixed: no frozen navigation state and no pose prior")]
    GaugeUnfixed,
    #[error("rank deficient system: {0}")]
    RankDeficient(String),
    #[error("solver diverged to NaN")]
    DivergedNaN,
}

/// Right retraction used for rig extrinsics and the pose part of a
/// navigation state: `t ← t + R δτ`, `R ← R exp(ψ)`.
pub fn retract_pose(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let tau = Vec3::new(delta[0], delta[1], delta[2]);
    let psi = Vec3::new(delta[3], delta[4], delta[5]);
    Pose::new(
        pose.rotation * Rotation::exp(&psi),
        pose.translation + pose.rotation.rotate(&tau),
    )
}

/// Measurement noise as a square-root information matrix `L` with
/// `LᵀL = Σ⁻¹`; whitened residuals are `L r`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    sqrt_info: DMatrix<f64>,
}

impl NoiseModel {
    pub fn isotropic(dim: usize, sigma: f64) -> Self {
        Self::diagonal(&vec![sigma; dim])
    }

    pub fn diagonal(sigmas: &[f64]) -> Self {
        let n = sigmas.len();
        Self {
            sqrt_info: DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / sigmas[i] } else { 0.0 }),
        }
    }

    /// From a full covariance. Returns `None` unless positive definite.
    pub fn from_covariance(cov: &DMatrix<f64>) -> Option<Self> {
        let info = cov.clone().cholesky()?.inverse();
        let info = 0.5 * (&info + info.transpose());
        let l = info.cholesky()?.l();
        Some(Self {
            sqrt_info: l.transpose(),
        })
    }

    pub fn dim(&self) -> usize {
        self.sqrt_info.nrows()
    }

    pub fn sqrt_information(&self) -> &DMatrix<f64> {
        &self.sqrt_info
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RobustLoss {
    #[default]
    None,
    Huber(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorKind {
    /// Keys: navigation state, landmark, camera extrinsic.
    Reprojection {
        camera: CameraId,
        pixel: Vector2<f64>,
    },
    /// Keys: navigation states `i`, `j`. Includes the bias random walk.
    Imu(Box<PreintegratedImu>),
    /// Keys: navigation state. `gyro` is the raw rate nearest in time.
    Dvl {
        sample: DvlSample,
        gyro: Vec3,
        extrinsic: Pose,
    },
    /// Keys: navigation state.
    Depth(DepthSample),
    /// Keys: navigation state or extrinsic.
    PriorPose(Pose),
    /// Keys: navigation state.
    PriorNavState(NavState),
}

impl FactorKind {
    pub fn name(&self) -> &'static str {
        match self {
            FactorKind::Reprojection { .. } => "reprojection",
            FactorKind::Imu(_) => "imu",
            FactorKind::Dvl { .. } => "dvl",
            FactorKind::Depth(_) => "depth",
            FactorKind::PriorPose(_) => "prior_pose",
            FactorKind::PriorNavState(_) => "prior_nav_state",
        }
    }

    fn residual_dim(&self) -> usize {
        match self {
            FactorKind::Reprojection { .. } => 2,
            FactorKind::Imu(_) => 15,
            FactorKind::Dvl { .. } => 3,
            FactorKind::Depth(_) => 1,
            FactorKind::PriorPose(_) => 6,
            FactorKind::PriorNavState(_) => 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub kind: FactorKind,
    pub keys: Vec<VariableKey>,
    pub noise: NoiseModel,
    pub loss: RobustLoss,
}

/// Current estimates plus the constants they are evaluated against.
#[derive(Debug, Clone, PartialEq)]
pub struct Values {
    pub navs: BTreeMap<usize, NavState>,
    pub landmarks: BTreeMap<usize, Vec3>,
    pub extrinsics: BTreeMap<CameraId, Pose>,
    pub intrinsics: BTreeMap<CameraId, CameraIntrinsics>,
    /// World-frame gravity used by inertial factors.
    pub gravity: Vec3,
}

impl Default for Values {
    fn default() -> Self {
        Self {
            navs: BTreeMap::new(),
            landmarks: BTreeMap::new(),
            extrinsics: BTreeMap::new(),
            intrinsics: BTreeMap::new(),
            gravity: GRAVITY,
        }
    }
}

impl Values {
    pub fn contains(&self, key: &VariableKey) -> bool {
        match key {
            VariableKey::Nav(i) => self.navs.contains_key(i),
            VariableKey::Landmark(i) => self.landmarks.contains_key(i),
            VariableKey::Extrinsic(c) => self.extrinsics.contains_key(c),
        }
    }

    pub fn nav(&self, i: usize) -> Result<&NavState, GraphError> {
        self.navs
            .get(&i)
            .ok_or(GraphError::UnknownVariable(VariableKey::Nav(i)))
    }

    pub fn landmark(&self, i: usize) -> Result<&Vec3, GraphError> {
        self.landmarks.get(&i).ok_or(GraphError::UnknownLandmark(i))
    }

    pub fn extrinsic(&self, c: CameraId) -> Result<&Pose, GraphError> {
        self.extrinsics
            .get(&c)
            .ok_or(GraphError::UnknownVariable(VariableKey::Extrinsic(c)))
    }

    /// Applies a tangent update to one variable.
    pub fn retract(&mut self, key: &VariableKey, delta: &[f64]) {
        match key {
            VariableKey::Nav(i) => {
                let s = self.navs.get_mut(i).expect("nav state");
                *s = s.retract(&nalgebra::SVector::<f64, 15>::from_column_slice(delta));
            }
            VariableKey::Landmark(i) => {
                let l = self.landmarks.get_mut(i).expect("landmark");
                *l += Vec3::from_column_slice(delta);
            }
            VariableKey::Extrinsic(c) => {
                let p = self.extrinsics.get_mut(c).expect("extrinsic");
                *p = retract_pose(p, &Vector6::from_column_slice(delta));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FactorGraph {
    pub values: Values,
    pub factors: Vec<Factor>,
    pub frozen: BTreeSet<VariableKey>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_nav(&mut self, index: usize, state: NavState) {
        self.values.navs.insert(index, state);
    }

    pub fn insert_landmark(&mut self, index: usize, point: Vec3) {
        self.values.landmarks.insert(index, point);
    }

    /// Adds a rig camera. Its extrinsic starts frozen at `extrinsic`.
    pub fn insert_camera(&mut self, id: CameraId, intrinsics: CameraIntrinsics, extrinsic: Pose) {
        self.values.intrinsics.insert(id, intrinsics);
        self.values.extrinsics.insert(id, extrinsic);
        self.frozen.insert(VariableKey::Extrinsic(id));
    }

    pub fn freeze(&mut self, key: VariableKey) {
        self.frozen.insert(key);
    }

    pub fn unfreeze(&mut self, key: &VariableKey) {
        self.frozen.remove(key);
    }

    pub fn is_frozen(&self, key: &VariableKey) -> bool {
        self.frozen.contains(key)
    }

    pub fn add_factor(&mut self, factor: Factor) -> Result<usize, GraphError> {
        check_arity(&factor)?;
        for key in &factor.keys {
            if !self.values.contains(key) {
                return Err(match key {
                    VariableKey::Landmark(i) => GraphError::UnknownLandmark(*i),
                    _ => GraphError::UnknownVariable(*key),
                });
            }
        }
        if let FactorKind::Reprojection { camera, .. } = factor.kind {
            if !self.values.intrinsics.contains_key(&camera) {
                return Err(GraphError::UnknownCamera(camera));
            }
        }
        if factor.noise.dim() != factor.kind.residual_dim() {
            return Err(GraphError::Arity(format!(
                "{} noise has dimension {}",
                factor.kind.name(),
                factor.noise.dim()
            )));
        }
        self.factors.push(factor);
        Ok(self.factors.len() - 1)
    }

    pub fn add_reprojection(
        &mut self,
        nav: usize,
        camera: CameraId,
        landmark: usize,
        pixel: Vector2<f64>,
        sigma_px: f64,
    ) -> Result<usize, GraphError> {
        self.add_factor(Factor {
            kind: FactorKind::Reprojection { camera, pixel },
            keys: vec![
                VariableKey::Nav(nav),
                VariableKey::Landmark(landmark),
                VariableKey::Extrinsic(camera),
            ],
            noise: NoiseModel::isotropic(2, sigma_px),
            loss: RobustLoss::Huber(DEFAULT_HUBER_DELTA),
        })
    }

    /// Inertial factor between consecutive states, with the bias random walk
    /// over the batch duration.
    pub fn add_imu(
        &mut self,
        i: usize,
        j: usize,
        delta: PreintegratedImu,
        noise: &ImuNoiseSpec,
    ) -> Result<usize, GraphError> {
        let mut cov = DMatrix::<f64>::zeros(15, 15);
        cov.view_mut((0, 0), (9, 9)).copy_from(&delta.covariance);
        let dt = delta.dt_total;
        for k in 0..3 {
            cov[(9 + k, 9 + k)] = noise.gyro_bias_random_walk.powi(2) * dt;
            cov[(12 + k, 12 + k)] = noise.accel_bias_random_walk.powi(2) * dt;
        }
        for k in 0..15 {
            cov[(k, k)] = cov[(k, k)].max(MIN_VARIANCE);
        }
        let noise = NoiseModel::from_covariance(&cov)
            .ok_or_else(|| GraphError::InvalidResidual("IMU covariance not positive definite".into()))?;
        self.add_factor(Factor {
            kind: FactorKind::Imu(Box::new(delta)),
            keys: vec![VariableKey::Nav(i), VariableKey::Nav(j)],
            noise,
            loss: RobustLoss::None,
        })
    }

    pub fn add_dvl(
        &mut self,
        nav: usize,
        sample: DvlSample,
        gyro: Vec3,
        extrinsic: Pose,
        sigma: f64,
    ) -> Result<usize, GraphError> {
        self.add_factor(Factor {
            kind: FactorKind::Dvl { sample, gyro, extrinsic },
            keys: vec![VariableKey::Nav(nav)],
            noise: NoiseModel::isotropic(3, sigma),
            loss: RobustLoss::None,
        })
    }

    pub fn add_depth(&mut self, nav: usize, sample: DepthSample, sigma: f64) -> Result<usize, GraphError> {
        self.add_factor(Factor {
            kind: FactorKind::Depth(sample),
            keys: vec![VariableKey::Nav(nav)],
            noise: NoiseModel::isotropic(1, sigma),
            loss: RobustLoss::None,
        })
    }

    /// Pose prior with translation and rotation sigmas.
    pub fn add_pose_prior(
        &mut self,
        key: VariableKey,
        anchor: Pose,
        sigma_m: f64,
        sigma_rad: f64,
    ) -> Result<usize, GraphError> {
        let (s, r) = (sigma_m, sigma_rad);
        self.add_factor(Factor {
            kind: FactorKind::PriorPose(anchor),
            keys: vec![key],
            noise: NoiseModel::diagonal(&[s, s, s, r, r, r]),
            loss: RobustLoss::None,
        })
    }

    /// Prior on a full navigation state; `sigmas` follow the tangent order
    /// position, rotation, velocity, gyro bias, accel bias.
    pub fn add_nav_prior(
        &mut self,
        nav: usize,
        anchor: NavState,
        sigmas: [f64; 5],
    ) -> Result<usize, GraphError> {
        let diag: Vec<f64> = sigmas.iter().flat_map(|s| [*s; 3]).collect();
        self.add_factor(Factor {
            kind: FactorKind::PriorNavState(anchor),
            keys: vec![VariableKey::Nav(nav)],
            noise: NoiseModel::diagonal(&diag),
            loss: RobustLoss::None,
        })
    }

    /// Appends reprojection factors binding states to existing landmarks.
    /// Validates the whole batch before changing the graph.
    pub fn add_loop_closure_observations(
        &mut self,
        reobservations: &[(usize, CameraId, usize, Vector2<f64>)],
        sigma_px: f64,
    ) -> Result<usize, GraphError> {
        for (nav, camera, landmark, _) in reobservations {
            if !self.values.landmarks.contains_key(landmark) {
                return Err(GraphError::UnknownLandmark(*landmark));
            }
            self.values.nav(*nav)?;
            if !self.values.intrinsics.contains_key(camera) {
                return Err(GraphError::UnknownCamera(*camera));
            }
        }
        for (nav, camera, landmark, pixel) in reobservations {
            self.add_reprojection(*nav, *camera, *landmark, *pixel, sigma_px)?;
        }
        Ok(reobservations.len())
    }

    /// Frozen extrinsics stay at calibration; released ones get a weak prior
    /// at their current value. Cameras absent from `enabled` are frozen.
    pub fn optimize_extrinsics_toggle(&mut self, enabled: &BTreeMap<CameraId, bool>) {
        let cameras: Vec<CameraId> = self.values.extrinsics.keys().copied().collect();
        for cam in cameras {
            let key = VariableKey::Extrinsic(cam);
            let on = enabled.get(&cam).copied().unwrap_or(false);
            let has_prior = self.factors.iter().any(|f| {
                matches!(f.kind, FactorKind::PriorPose(_)) && f.keys == [key]
            });
            if on {
                self.frozen.remove(&key);
                if !has_prior {
                    let anchor = self.values.extrinsics[&cam];
                    let s = EXTRINSIC_PRIOR_SIGMA_M;
                    let r = EXTRINSIC_PRIOR_SIGMA_RAD;
                    self.factors.push(Factor {
                        kind: FactorKind::PriorPose(anchor),
                        keys: vec![key],
                        noise: NoiseModel::diagonal(&[s, s, s, r, r, r]),
                        loss: RobustLoss::None,
                    });
                }
            } else {
                self.frozen.insert(key);
            }
        }
    }

    /// The same problem expressed in a world frame moved by `t`: estimates,
    /// anchors and gravity are transformed. Depth factors measure the world
    /// z axis and are left as they are, so only transforms that keep z are
    /// exact for graphs containing them.
    pub fn transformed(&self, t: &Pose) -> FactorGraph {
        let move_nav = |s: &NavState| NavState::new(*t * s.pose, t.rotation.rotate(&s.velocity), s.bias);
        let mut g = self.clone();
        for s in g.values.navs.values_mut() {
            *s = move_nav(s);
        }
        for l in g.values.landmarks.values_mut() {
            *l = t.transform_point(l);
        }
        g.values.gravity = t.rotation.rotate(&g.values.gravity);
        for f in g.factors.iter_mut() {
            match &mut f.kind {
                FactorKind::PriorNavState(a) => *a = move_nav(a),
                FactorKind::PriorPose(a) if matches!(f.keys[0], VariableKey::Nav(_)) => *a = *t * *a,
                _ => {}
            }
        }
        g
    }

    /// Number of factors of each kind, sorted by name.
    pub fn factor_census(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for f in &self.factors {
            *out.entry(f.kind.name()).or_insert(0) += 1;
        }
        out
    }

    /// Sum of robust costs over valid factors and the number of factors
    /// whose residual could not be evaluated.
    pub fn cost(&self) -> (f64, usize) {
        self.cost_at(&self.values)
    }

    pub(crate) fn cost_at(&self, values: &Values) -> (f64, usize) {
        let mut total = 0.0;
        let mut invalid = 0;
        for f in &self.factors {
            match factors::whitened_residual(f, values) {
                Ok(r) => total += robust_cost(&f.loss, r.norm()),
                Err(_) => invalid += 1,
            }
        }
        (total, invalid)
    }
}

fn check_arity(f: &Factor) -> Result<(), GraphError> {
    use VariableKey::*;
    let ok = match (&f.kind, f.keys.as_slice()) {
        (FactorKind::Reprojection { camera, .. }, [Nav(_), Landmark(_), Extrinsic(c)]) => c == camera,
        (FactorKind::Imu(_), [Nav(a), Nav(b)]) => a != b,
        (FactorKind::Dvl { .. }, [Nav(_)]) => true,
        (FactorKind::Depth(_), [Nav(_)]) => true,
        (FactorKind::PriorPose(_), [Nav(_)] | [Extrinsic(_)]) => true,
        (FactorKind::PriorNavState(_), [Nav(_)]) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(GraphError::Arity(format!("{} with keys {:?}", f.kind.name(), f.keys)))
    }
}
