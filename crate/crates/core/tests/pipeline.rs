use uwslam::eval::{align, AlignMode};
use uwslam::geometry::{Pose, Rotation, Vec3};
use uwslam::graph::solve;
use uwslam::io::TrajectoryEntry;
use uwslam::pipeline::{build_graph, estimate, Initialization, PipelineConfig, SensorFlags};
use uwslam::simulator::{frontend_init, preset, truth_at, Scenario, SimNoise, SimOutput};

fn noiseless(name: &str, duration: f64) -> (Scenario, SimOutput) {
    let mut s = preset(name).unwrap();
    s.noise = SimNoise::zero();
    s.survey.duration = duration;
    let out = s.simulate().unwrap();
    (s, out)
}

fn entries(times: &[i64], poses: impl Iterator<Item = Pose>) -> Vec<TrajectoryEntry> {
    times.iter().zip(poses).map(|(&t, pose)| TrajectoryEntry { t, pose }).collect()
}

#[test]
fn ground_truth_initialization_has_zero_cost() {
    let (s, out) = noiseless("hercules_small", 20.0);
    let calib = s.calibration.to_calibration().unwrap();
    let times = s.keyframe_times(out.duration_ns);
    let gt: Vec<_> = times.iter().map(|&t| truth_at(&out.truth, t).0).collect();
    let cfg = PipelineConfig { tolerance_ns: 0, ..Default::default() };
    let built = build_graph(&out.log, &calib, &times, &Initialization::States(gt), &cfg).unwrap();
    let (cost, invalid) = built.graph.cost();
    assert_eq!(invalid, 0);
    assert!(cost < 1e-12, "{cost:e}");
    assert_eq!(built.report.dropped_tracks, 0);
    assert!(built.report.census["reprojection"] > 1000);
    assert_eq!(built.report.census["imu"], times.len() - 1);
}

#[test]
fn noiseless_solve_recovers_the_trajectory() {
    let (s, out) = noiseless("hercules_small", 20.0);
    let calib = s.calibration.to_calibration().unwrap();
    let times = s.keyframe_times(out.duration_ns);
    let init = frontend_init(&out.truth, &times, 0.05, 2f64.to_radians(), 3);
    let cfg = PipelineConfig { tolerance_ns: 0, ..Default::default() };
    let est = estimate(&out.log, &calib, &times, &Initialization::Poses(init.into_iter().map(|p| p.1).collect()), &cfg)
        .unwrap();
    let truth = entries(&times, times.iter().map(|&t| truth_at(&out.truth, t).0.pose));
    let al = align(&entries(&times, est.states.iter().map(|s| s.pose)), &truth, AlignMode::Rigid).unwrap();
    assert!(al.ate_rmse <= 1e-6, "{:e}", al.ate_rmse);
}

#[test]
fn sensor_flags_remove_exactly_their_factor_kind() {
    let (s, out) = noiseless("hercules_small", 10.0);
    let calib = s.calibration.to_calibration().unwrap();
    let times = s.keyframe_times(out.duration_ns);
    let gt: Vec<_> = times.iter().map(|&t| truth_at(&out.truth, t).0).collect();
    let init = Initialization::States(gt);
    let census = |sensors: SensorFlags| {
        let cfg = PipelineConfig { sensors, ..Default::default() };
        build_graph(&out.log, &calib, &times, &init, &cfg).unwrap().report.census
    };
    let all = census(SensorFlags::default());
    let cases: [(&str, fn(&mut SensorFlags)); 4] = [
        ("reprojection", |f| f.vision = false),
        ("imu", |f| f.imu = false),
        ("dvl", |f| f.dvl = false),
        ("depth", |f| f.depth = false),
    ];
    for (kind, disable) in cases {
        let mut flags = SensorFlags::default();
        disable(&mut flags);
        let c = census(flags);
        assert!(!c.contains_key(kind), "{kind} still present");
        for (k, n) in &all {
            if *k != kind && *k != "prior_nav_state" {
                assert_eq!(c.get(k), Some(n), "disabling {kind} changed {k}");
            }
        }
    }
    let none = SensorFlags { vision: false, imu: false, dvl: false, depth: false };
    let cfg = PipelineConfig { sensors: none, ..Default::default() };
    assert!(build_graph(&out.log, &calib, &times, &init, &cfg).is_err());
}

#[test]
fn dead_reckoning_runs_without_cameras() {
    let mut s = preset("plm").unwrap();
    s.survey.duration = 15.0;
    s.schedule.blackouts.clear();
    let out = s.simulate().unwrap();
    let calib = s.calibration.to_calibration().unwrap();
    let times = s.keyframe_times(out.duration_ns);
    let cfg = PipelineConfig {
        sensors: SensorFlags { vision: false, ..Default::default() },
        ..Default::default()
    };
    let est = estimate(&out.log, &calib, &times, &Initialization::DeadReckoning, &cfg).unwrap();
    assert!(!est.build.census.contains_key("reprojection"));
    assert!(est.states.iter().all(|s| s.is_finite()));
    let truth = entries(&times, times.iter().map(|&t| truth_at(&out.truth, t).0.pose));
    let al = align(&entries(&times, est.states.iter().map(|s| s.pose)), &truth, AlignMode::Rigid).unwrap();
    assert!(al.ate_rmse < 1.0, "{}", al.ate_rmse);
}

#[test]
fn pipeline_graph_is_gauge_invariant() {
    let mut s = preset("hercules_small").unwrap();
    s.survey.duration = 10.0;
    let out = s.simulate().unwrap();
    let calib = s.calibration.to_calibration().unwrap();
    let times = s.keyframe_times(out.duration_ns);
    let init = frontend_init(&out.truth, &times, 0.05, 2f64.to_radians(), 5);
    let cfg = PipelineConfig {
        sensors: SensorFlags { depth: false, ..Default::default() },
        ..Default::default()
    };
    let built = build_graph(&out.log, &calib, &times, &Initialization::Poses(init.into_iter().map(|p| p.1).collect()), &cfg)
        .unwrap();
    let base = solve(&built.graph, &cfg.solve_options()).unwrap();
    let t = Pose::new(Rotation::exp(&Vec3::new(0.4, -1.1, 2.0)), Vec3::new(30.0, -12.0, 7.0));
    let moved = solve(&built.graph.transformed(&t), &cfg.solve_options()).unwrap();
    for (k, st) in &base.values.navs {
        let expect = t * st.pose;
        let got = moved.values.navs[k].pose;
        assert!((expect.translation - got.translation).norm() <= 1e-6);
        assert!((expect.rotation.inverse() * got.rotation).angle() <= 1e-6);
    }
}
