//! Finite-difference verification of the analytic factor Jacobians.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::factors::{numerical_jacobians, raw_linearize};
use super::{Factor, FactorKind, GraphError, NoiseModel, RobustLoss, Values, VariableKey};
use crate::geometry::{mount_rotation, CameraIntrinsics, Pose, Rotation, Vec3};
use crate::sensors::{
    preintegrate, DepthSample, DvlSample, ImuBias, ImuNoiseSpec, ImuSample, NavState,
};

/// Central-difference step on every tangent coordinate.
pub const FD_STEP: f64 = 1e-6;

/// Relative error between two Jacobian blocks, with a unit floor on the
/// denominator so that near-zero blocks are compared absolutely.
pub fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).norm() / numeric.norm().max(1.0)
}

/// Largest relative error over the blocks of one factor.
pub fn factor_jacobian_error(f: &Factor, values: &Values) -> Result<f64, GraphError> {
    let (_, analytic) = raw_linearize(f, values)?;
    let numeric = numerical_jacobians(f, values, FD_STEP)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

fn v3(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

fn random_nav(rng: &mut impl Rng) -> NavState {
    NavState::new(
        Pose::new(Rotation::exp(&v3(rng, 2.0)), v3(rng, 10.0)),
        v3(rng, 1.0),
        ImuBias {
            gyro: v3(rng, 0.01),
            accel: v3(rng, 0.1),
        },
    )
}

fn factor(kind: FactorKind, keys: Vec<VariableKey>, dim: usize) -> Factor {
    Factor {
        kind,
        keys,
        noise: NoiseModel::isotropic(dim, 1.0),
        loss: RobustLoss::None,
    }
}

/// One random configuration per call for the named factor kind.
fn random_case(kind: &str, rng: &mut ChaCha8Rng) -> (Factor, Values) {
    let mut values = Values::default();
    let s0 = random_nav(rng);
    values.navs.insert(0, s0);
    match kind {
        "reprojection" => {
            let mut k = CameraIntrinsics::from_fov(1600, 1200, 82f64.to_radians());
            k.k1 = rng.random_range(-0.1..0.1);
            k.k2 = rng.random_range(-0.02..0.02);
            let ext = Pose::new(
                mount_rotation(rng.random_range(-1.5..1.5), rng.random_range(-0.6..0.6)),
                v3(rng, 0.3),
            );
            let pc = Vec3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.4..0.4),
                rng.random_range(1.0..6.0),
            );
            let landmark = s0.pose.transform_point(&ext.transform_point(&pc));
            values.intrinsics.insert(3, k);
            values.extrinsics.insert(3, ext);
            values.landmarks.insert(7, landmark + v3(rng, 0.05));
            let pixel = Vector2::new(rng.random_range(0.0..1600.0), rng.random_range(0.0..1200.0));
            let keys = vec![VariableKey::Nav(0), VariableKey::Landmark(7), VariableKey::Extrinsic(3)];
            (factor(FactorKind::Reprojection { camera: 3, pixel }, keys, 2), values)
        }
        "imu" => {
            let n = rng.random_range(5..120);
            let g = v3(rng, 0.5);
            let a = v3(rng, 1.0) - Vec3::new(0.0, 0.0, 9.81);
            let samples: Vec<ImuSample> = (0..n)
                .map(|k| ImuSample {
                    t: k as i64 * 2_000_000,
                    gyro: g + v3(rng, 0.05),
                    accel: a + v3(rng, 0.2),
                })
                .collect();
            let lin = ImuBias {
                gyro: s0.bias.gyro + v3(rng, 0.002),
                accel: s0.bias.accel + v3(rng, 0.02),
            };
            let delta = preintegrate(&samples, n as i64 * 2_000_000, &lin, &ImuNoiseSpec::default())
                .expect("valid batch");
            values.navs.insert(1, random_nav(rng));
            let keys = vec![VariableKey::Nav(0), VariableKey::Nav(1)];
            (factor(FactorKind::Imu(Box::new(delta)), keys, 15), values)
        }
        "dvl" => {
            let sample = DvlSample {
                t: 0,
                velocity_body: v3(rng, 1.0),
                valid: [true, rng.random_bool(0.8), true],
            };
            let extrinsic = Pose::new(Rotation::exp(&v3(rng, 1.0)), v3(rng, 0.5));
            let kind = FactorKind::Dvl {
                sample,
                gyro: v3(rng, 0.3),
                extrinsic,
            };
            (factor(kind, vec![VariableKey::Nav(0)], 3), values)
        }
        "depth" => {
            let sample = DepthSample {
                t: 0,
                depth: rng.random_range(0.0..50.0),
            };
            (factor(FactorKind::Depth(sample), vec![VariableKey::Nav(0)], 1), values)
        }
        "prior_pose" => {
            let anchor = s0.pose.retract(&nalgebra::Vector6::from_fn(|_, _| rng.random_range(-0.5..0.5)));
            if rng.random_bool(0.5) {
                (factor(FactorKind::PriorPose(anchor), vec![VariableKey::Nav(0)], 6), values)
            } else {
                values.extrinsics.insert(1, s0.pose);
                (factor(FactorKind::PriorPose(anchor), vec![VariableKey::Extrinsic(1)], 6), values)
            }
        }
        "prior_nav_state" => {
            let anchor = random_nav(rng);
            (factor(FactorKind::PriorNavState(anchor), vec![VariableKey::Nav(0)], 15), values)
        }
        other => panic!("unknown factor kind {other}"),
    }
}

pub const FACTOR_KINDS: [&str; 6] = [
    "reprojection",
    "imu",
    "dvl",
    "depth",
    "prior_pose",
    "prior_nav_state",
];

/// Worst relative Jacobian error per factor kind over `cases` random
/// configurations each.
pub fn jacobian_self_check(cases: usize, seed: u64) -> BTreeMap<&'static str, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for kind in FACTOR_KINDS {
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let (f, values) = random_case(kind, &mut rng);
            let e = factor_jacobian_error(&f, &values).unwrap_or(f64::INFINITY);
            worst = worst.max(e);
        }
        out.insert(kind, worst);
    }
    out
}
