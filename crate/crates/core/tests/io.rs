use std::io::Cursor;

use ply_rs::parser::Parser;
use ply_rs::ply::{DefaultElement, Property};
use proptest::prelude::*;
use uwslam::geometry::{Pose, Rotation, Vec3};
use uwslam::io::*;
use uwslam::semantics::{LabeledPoint, LabeledPointCloud, SemanticClass};
use uwslam::sensors::{DvlSample, ImuSample};
use uwslam::simulator::preset;

fn imu(t: i64) -> LogRecord {
    LogRecord::imu(&ImuSample {
        t,
        gyro: Vec3::new(t as f64 * 1e-9, 0.0, 0.0),
        accel: Vec3::new(0.0, 0.0, -9.81),
    })
}

fn dvl(t: i64) -> LogRecord {
    LogRecord::dvl(&DvlSample {
        t,
        velocity_body: Vec3::new(0.5, 0.0, 0.0),
        valid: [true; 3],
    })
}

#[test]
fn empty_log_is_header_only() {
    let bytes = write_log_to_vec(&[]).unwrap();
    assert_eq!(String::from_utf8(bytes.clone()).unwrap().lines().count(), 1);
    assert!(read_log(Cursor::new(bytes)).unwrap().is_empty());
}

#[test]
fn ten_second_simulator_log_round_trips() {
    let mut s = preset("hercules_small").unwrap();
    s.survey.duration = 10.0;
    let out = s.simulate().unwrap();
    let count = |f: fn(&LogRecord) -> bool| out.log.iter().filter(|r| f(r)).count();
    assert_eq!(count(|r| matches!(r.payload, Payload::Imu { .. })), 5000);
    assert_eq!(count(|r| matches!(r.payload, Payload::Dvl { .. })), 70);
    assert_eq!(count(|r| matches!(r.payload, Payload::Camera { .. })), 300 * 3);
    let bytes = write_log_to_vec(&out.log).unwrap();
    let back = read_log(Cursor::new(&bytes)).unwrap();
    assert_eq!(back, out.log);
    assert_eq!(write_log_to_vec(&back).unwrap(), bytes);
}

#[test]
fn missing_timestamp_names_the_line() {
    let mut text = String::from_utf8(write_log_to_vec(&[imu(0), imu(2_000_000)]).unwrap()).unwrap();
    text.push_str("{\"type\":\"depth\",\"depth\":3.0}\n");
    match read_log(Cursor::new(text)) {
        Err(IoError::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }
}

#[test]
fn out_of_order_records_are_rejected() {
    assert!(matches!(
        write_log_to_vec(&[imu(5), imu(3)]),
        Err(IoError::NonMonotonicTimestamps { previous: 5, next: 3 })
    ));
}

#[test]
fn dvl_tie_binds_to_earlier_state() {
    let states = [0, 100_000_000, 200_000_000];
    let a = associate(&[dvl(50_000_000)], &states, 50_000_000);
    assert_eq!(a.bundles[0].dvl.len(), 1);
    assert!(a.bundles[1].dvl.is_empty());
    let a = associate(&[dvl(280_000_000)], &states, 50_000_000);
    assert_eq!(a.report.dvl_unassociated, 1);
    let a = associate(&[dvl(180_000_000)], &[0, 100_000_000, 280_000_000], 50_000_000);
    assert_eq!(a.report.dvl_unassociated, 1);
}

#[test]
fn imu_batches_partition_the_samples() {
    let records: Vec<_> = (0..1000).map(|k| imu(k * 2_000_000 + 700_000)).collect();
    let states: Vec<i64> = (0..20).map(|k| k * 100_000_000).collect();
    let a = associate(&records, &states, DEFAULT_TOLERANCE_NS);
    assert_eq!(a.report.imu_balance(), 0);
    let real: Vec<i64> = a
        .bundles
        .iter()
        .flat_map(|b| &b.imu)
        .filter(|s| !s.synthetic)
        .map(|s| s.sample.t)
        .collect();
    let expected: Vec<i64> = records
        .iter()
        .map(|r| r.t)
        .filter(|&t| t >= states[0] && t < *states.last().unwrap())
        .collect();
    assert_eq!(real, expected);
    for (k, b) in a.bundles.iter().enumerate().take(states.len() - 1) {
        let first = b.imu.first().unwrap();
        if k > 0 {
            assert!(first.synthetic && first.sample.t == states[k]);
        }
        assert!(b.imu.iter().all(|s| s.sample.t >= states[k] && s.sample.t < states[k + 1]));
    }
}

const TILTED: &str = r#"
[[camera]]
id = 0
width = 1600
height = 1200
fx = 920.3
fy = 920.3
cx = 800.0
cy = 600.0
yaw_deg = 0.0
pitch_deg = 0.0

[[camera]]
id = 1
width = 1600
height = 1200
fx = 920.3
fy = 920.3
cx = 800.0
cy = 600.0
yaw_deg = 0.0
pitch_deg = 30.0
translation = [0.1, 0.0, 0.0]

[[camera]]
id = 2
width = 1600
height = 1200
fx = 920.3
fy = 920.3
cx = 800.0
cy = 600.0
yaw_deg = 0.0
pitch_deg = 45.0
"#;

#[test]
fn tilted_cameras_pitch_their_principal_rays() {
    let c = load_calibration(TILTED).unwrap();
    for (cam, deg) in c.rig.cameras().iter().zip([0.0f64, 30.0, 45.0]) {
        let ray = cam.extrinsic.rotation.rotate(&Vec3::z());
        let a = deg.to_radians();
        assert!((ray - Vec3::new(a.cos(), 0.0, a.sin())).norm() < 1e-12, "{deg}: {ray}");
    }
    let again = load_calibration(&save_calibration(&c).unwrap()).unwrap();
    for (a, b) in c.rig.cameras().iter().zip(again.rig.cameras()) {
        assert!((a.extrinsic.inverse() * b.extrinsic).log().to_vector().norm() < 1e-12);
        assert_eq!(a.intrinsics, b.intrinsics);
    }
}

#[test]
fn identity_single_camera_and_duplicate_ids() {
    let single = r#"
[[camera]]
id = 0
width = 640
height = 480
fx = 500.0
fy = 500.0
cx = 320.0
cy = 240.0
rotation = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
"#;
    let c = load_calibration(single).unwrap();
    assert_eq!(c.rig.len(), 1);
    assert_eq!(c.rig.cameras()[0].extrinsic, Pose::identity());
    let dup = TILTED.replace("id = 2", "id = 1");
    assert!(matches!(load_calibration(&dup), Err(IoError::Schema(_))));
    let skewed = single.replace("[0, 1, 0]", "[0.1, 1, 0]");
    assert!(matches!(load_calibration(&skewed), Err(IoError::NonOrthonormalRotation { .. })));
}

fn cloud() -> LabeledPointCloud {
    // Coordinates exactly representable in f32 so the import is lossless.
    LabeledPointCloud {
        points: vec![
            LabeledPoint::new(Vec3::new(0.5, -1.25, 3.0), SemanticClass::Pipeline),
            LabeledPoint::new(Vec3::new(10.125, 2.25, -0.375), SemanticClass::PipelineSupport),
            LabeledPoint::new(Vec3::new(-7.0, 0.0, 12.75), SemanticClass::Seabed),
        ],
    }
}

fn parse_with_ply_rs(bytes: &[u8]) -> Vec<([f32; 3], [u8; 4])> {
    let parser = Parser::<DefaultElement>::new();
    let ply = parser.read_ply(&mut Cursor::new(bytes)).unwrap();
    let f = |p: &Property| match p {
        Property::Float(x) => *x,
        other => panic!("{other:?}"),
    };
    let u = |p: &Property| match p {
        Property::UChar(x) => *x,
        other => panic!("{other:?}"),
    };
    ply.payload["vertex"]
        .iter()
        .map(|e| {
            (
                [f(&e["x"]), f(&e["y"]), f(&e["z"])],
                [u(&e["red"]), u(&e["green"]), u(&e["blue"]), u(&e["label"])],
            )
        })
        .collect()
}

#[test]
fn ply_matches_an_independent_reader() {
    let c = cloud();
    for binary in [false, true] {
        let bytes = export_ply(&c, binary).unwrap();
        let parsed = parse_with_ply_rs(&bytes);
        assert_eq!(parsed.len(), 3);
        for (p, (xyz, rgbl)) in c.points.iter().zip(&parsed) {
            assert_eq!(*xyz, [p.position.x as f32, p.position.y as f32, p.position.z as f32]);
            assert_eq!(rgbl[..3], p.color);
            assert_eq!(rgbl[3], p.class.id());
        }
        assert_eq!(import_ply(&bytes).unwrap(), c);
        assert_eq!(export_ply(&c, binary).unwrap(), bytes);
    }
    let empty = export_ply(&LabeledPointCloud::default(), false).unwrap();
    assert!(String::from_utf8(empty.clone()).unwrap().contains("element vertex 0\n"));
    assert!(parse_with_ply_rs(&empty).is_empty());
    let mut bad = cloud();
    bad.points[1].position.y = f64::NAN;
    assert!(matches!(export_ply(&bad, true), Err(IoError::NonFinitePoint { index: 1 })));
}

#[test]
fn trajectory_rejects_bad_quaternions() {
    let text = "# t x y z qx qy qz qw\n0.000000000 0 0 0 0 0 0 2\n";
    assert!(read_trajectory(text).is_err());
    assert_eq!(parse_timestamp("12.000000001"), Some(12_000_000_001));
    assert_eq!(format_timestamp(12_000_000_001), "12.000000001");
}

proptest! {
    #[test]
    fn trajectory_round_trip(
        steps in prop::collection::vec((1i64..5_000_000_000, prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(-1e3..1e3f64)), 0..40)
    ) {
        let mut t = 0;
        let entries: Vec<_> = steps
            .into_iter()
            .map(|(dt, w, p)| {
                t += dt;
                TrajectoryEntry { t, pose: Pose::new(Rotation::exp(&Vec3::from(w)), Vec3::from(p)) }
            })
            .collect();
        let text = write_trajectory(&entries).unwrap();
        let back = read_trajectory(&text).unwrap();
        prop_assert_eq!(back.len(), entries.len());
        for (a, b) in entries.iter().zip(&back) {
            prop_assert_eq!(a.t, b.t);
            prop_assert!((a.pose.translation - b.pose.translation).norm() < 1e-9);
            prop_assert!((a.pose.rotation.inverse() * b.pose.rotation).angle() < 1e-9);
        }
        prop_assert_eq!(write_trajectory(&entries).unwrap(), text);
    }
}
