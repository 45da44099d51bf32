use nalgebra::{Matrix4, SymmetricEigen, UnitQuaternion, Quaternion};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;

fn helix(n: usize) -> Vec<TrajectoryEntry> {
    (0..n)
        .map(|k| {
            let a = k as f64 * 0.05;
            TrajectoryEntry {
                t: k as i64 * 100_000_000,
                pose: Pose::new(Rotation::rot_z(a), Vec3::new(5.0 * a.cos(), 5.0 * a.sin(), 0.1 * k as f64)),
            }
        })
        .collect()
}

fn apply(traj: &[TrajectoryEntry], t: &Pose) -> Vec<TrajectoryEntry> {
    traj.iter()
        .map(|e| TrajectoryEntry {
            t: e.t,
            pose: *t * e.pose,
        })
        .collect()
}

/// Horn's closed-form absolute orientation: the optimal rotation is the
/// dominant eigenvector of a 4×4 matrix built from the cross-covariance.
fn horn(src: &[Vec3], dst: &[Vec3]) -> (Rotation, Vec3) {
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vec3>() / n;
    let md = dst.iter().sum::<Vec3>() / n;
    let mut m = nalgebra::Matrix3::<f64>::zeros();
    for (s, d) in src.iter().zip(dst) {
        m += (s - ms) * (d - md).transpose();
    }
    let (sxx, sxy, sxz) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let (syx, syy, syz) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let (szx, szy, szz) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
    let nmat = Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(nmat);
    let i = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(i);
    let r = Rotation::from_unit_quaternion(UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3])));
    (r, md - r.rotate(&ms))
}

#[test]
fn identical_trajectories_align_to_identity() {
    let t = helix(50);
    let al = align(&t, &t, AlignMode::Rigid).unwrap();
    assert!(al.ate_rmse < 1e-12);
    assert!(al.transform.rotation.angle() < 1e-9);
    assert!(al.transform.translation.norm() < 1e-9);
}

#[test]
fn pure_offset_is_recovered() {
    let r = helix(50);
    let e = apply(&r, &Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)));
    let al = align(&e, &r, AlignMode::Rigid).unwrap();
    assert!((al.transform.translation - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    assert!(al.ate_rmse <= 1e-12);
}

#[test]
fn noisy_rigid_alignment_matches_horn() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let reference: Vec<TrajectoryEntry> = (0..500)
        .map(|k| TrajectoryEntry {
            t: k as i64 * 50_000_000,
            pose: Pose::new(
                Rotation::identity(),
                Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-3.0..3.0)),
            ),
        })
        .collect();
    let truth = Pose::new(
        Rotation::exp(&Vec3::new(0.3, -0.7, 1.9)),
        Vec3::new(4.0, -2.0, 7.5),
    );
    let est: Vec<TrajectoryEntry> = apply(&reference, &truth)
        .into_iter()
        .map(|mut e| {
            let n: Vec3 = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * 0.01);
            e.pose.translation += n;
            e
        })
        .collect();
    let al = align(&est, &reference, AlignMode::Rigid).unwrap();
    // Isotropic 1 cm noise per axis.
    let per_axis = al.ate_rmse / 3f64.sqrt();
    assert!((0.0095..=0.0105).contains(&per_axis), "{}", al.ate_rmse);
    let src: Vec<Vec3> = reference.iter().map(|e| e.pose.translation).collect();
    let dst: Vec<Vec3> = est.iter().map(|e| e.pose.translation).collect();
    let (hr, ht) = horn(&src, &dst);
    assert!((hr.inverse() * al.transform.rotation).angle() < 1e-3);
    assert!((ht - al.transform.translation).norm() < 1e-3);
    assert!((truth.inverse() * al.transform).log().to_vector().norm() < 1e-2);
}

#[test]
fn too_few_pairs_or_collinear_points_fail() {
    let r = helix(2);
    assert!(matches!(align(&r, &r, AlignMode::Rigid), Err(EvalError::InsufficientOverlap { pairs: 2 })));
    let line: Vec<TrajectoryEntry> = (0..10)
        .map(|k| TrajectoryEntry {
            t: k * 1_000_000_000,
            pose: Pose::from_translation(Vec3::new(k as f64, 2.0 * k as f64, 0.0)),
        })
        .collect();
    assert_eq!(align(&line, &line, AlignMode::Rigid), Err(EvalError::DegenerateConfiguration));
    // Shifted beyond the 10 ms tolerance: nothing pairs up.
    let shifted: Vec<_> = helix(20).into_iter().map(|mut e| {
        e.t += 20_000_000;
        e
    }).collect();
    assert!(matches!(align(&shifted, &helix(20), AlignMode::Rigid), Err(EvalError::InsufficientOverlap { pairs: 0 })));
}

#[test]
fn similarity_recovers_scale() {
    let r = helix(60);
    let e: Vec<_> = r
        .iter()
        .map(|x| TrajectoryEntry {
            t: x.t,
            pose: Pose::new(x.pose.rotation, x.pose.translation * 2.0 + Vec3::new(1.0, 1.0, 1.0)),
        })
        .collect();
    let sim = align(&e, &r, AlignMode::Similarity).unwrap();
    assert!((sim.scale - 2.0).abs() < 1e-9);
    assert!(sim.ate_rmse < 1e-9);
    let rigid = align(&e, &r, AlignMode::Rigid).unwrap();
    assert!(rigid.ate_rmse > sim.ate_rmse);
}

#[test]
fn rpe_ignores_a_constant_offset() {
    let r = helix(100);
    let e: Vec<_> = r
        .iter()
        .map(|x| TrajectoryEntry {
            t: x.t,
            pose: Pose::new(Rotation::rot_z(0.4), Vec3::new(3.0, 1.0, -2.0)) * x.pose,
        })
        .collect();
    let res = rpe(&e, &r, 1.0).unwrap();
    assert!(res.translation_rmse < 1e-9 && res.rotation_rmse < 1e-9);
    assert_eq!(res.pairs.len(), 90);
}

#[test]
fn rpe_measures_linear_drift() {
    let r = helix(200);
    let e: Vec<_> = r
        .iter()
        .map(|x| {
            let secs = x.t as f64 * 1e-9;
            TrajectoryEntry {
                t: x.t,
                pose: Pose::new(x.pose.rotation, x.pose.translation + Vec3::new(0.01 * secs, 0.0, 0.0)),
            }
        })
        .collect();
    let res = rpe(&e, &r, 1.0).unwrap();
    assert!((res.translation_rmse - 0.01).abs() < 0.0005, "{}", res.translation_rmse);
    assert_eq!(rpe(&e, &r, 100.0), Err(EvalError::InsufficientSpan { delta: 100.0 }));
}

#[test]
fn metrics_serialize() {
    let r = helix(40);
    let (m, al) = metrics(&r, &r, AlignMode::Rigid, 1.0).unwrap();
    assert_eq!(m.pairs, 40);
    let text = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<Metrics>(&text).unwrap(), m);
    assert_eq!(errors_csv(&al).lines().count(), 41);
}

fn arb_pose() -> impl Strategy<Value = Pose> {
    (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(-20.0..20.0f64))
        .prop_map(|(w, t)| Pose::new(Rotation::exp(&Vec3::from(w)), Vec3::from(t)))
}

proptest! {
    #[test]
    fn ate_is_invariant_under_a_common_transform(g in arb_pose(), off in arb_pose()) {
        let r = helix(30);
        let mut e = apply(&r, &off);
        for (k, x) in e.iter_mut().enumerate() {
            x.pose.translation += Vec3::new((k as f64 * 0.7).sin(), (k as f64 * 1.3).cos(), 0.0) * 0.05;
        }
        let a = align(&e, &r, AlignMode::Rigid).unwrap().ate_rmse;
        let b = align(&apply(&e, &g), &apply(&r, &g), AlignMode::Rigid).unwrap().ate_rmse;
        prop_assert!((a - b).abs() <= 1e-9);
        let s = align(&e, &r, AlignMode::Similarity).unwrap().ate_rmse;
        prop_assert!(s <= a + 1e-12);
    }

    #[test]
    fn rpe_is_invariant_under_left_transform(g in arb_pose()) {
        let r = helix(40);
        let mut e = r.clone();
        for (k, x) in e.iter_mut().enumerate() {
            x.pose.translation += Vec3::new(0.02 * k as f64, 0.0, 0.01);
        }
        let a = rpe(&e, &r, 0.5).unwrap();
        let b = rpe(&apply(&e, &g), &r, 0.5).unwrap();
        prop_assert!((a.translation_rmse - b.translation_rmse).abs() < 1e-9);
        prop_assert!((a.rotation_rmse - b.rotation_rmse).abs() < 1e-9);
    }
}
