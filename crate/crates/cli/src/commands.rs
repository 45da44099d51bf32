use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use uwslam::eval::{errors_csv, metrics, AlignMode, Metrics, ASSOCIATION_TOLERANCE_NS};
use uwslam::geometry::{CameraId, CameraIntrinsics, RigCalibration};
use uwslam::graph::{IterationRecord, TerminationReason};
use uwslam::io::{
    export_ply, import_ply, load_calibration, read_log, read_trajectory, save_calibration,
    write_log_to_vec, write_trajectory, CalibrationFile, TrajectoryEntry,
};
use uwslam::pipeline::{estimate, keyframe_times, BuildReport, Initialization, PipelineConfig};
use uwslam::semantics::{
    consistency_report, fuse, project_labels, read_depth_map, read_label_map, write_depth_map, write_label_map,
    LabeledPoint, LabeledPointCloud, SemanticClass,
};
use uwslam::simulator::{frontend_init, preset, render_oracle_maps, Scenario, SimNoise, PRESET_NAMES};

use crate::manifest::Recorder;
use crate::{Align, CliError, EvalArgs, Loss, ReportArgs, SemanticsArgs, Sensor, SimulateArgs, SolveArgs};

pub const MAP_INDEX: &str = "index.json";

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::file(path, e))
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s.into_bytes()
}

fn load_scenario(spec: &str) -> Result<Scenario, CliError> {
    if PRESET_NAMES.contains(&spec) {
        return Ok(preset(spec)?);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(usage(format!(
            "--scenario {spec}: not a preset ({}) or an existing file",
            PRESET_NAMES.join(", ")
        )));
    }
    Ok(Scenario::from_toml(&read_text(path)?)?)
}

/// One rendered camera frame listed in a map index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFrame {
    pub t: i64,
    pub camera_id: CameraId,
    pub intrinsics: CameraIntrinsics,
    pub depth: String,
    pub labels: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MapIndex {
    pub frames: Vec<MapFrame>,
}

fn scaled(k: &CameraIntrinsics, s: f64) -> CameraIntrinsics {
    let width = ((k.width as f64 * s).round() as u32).max(1);
    let height = ((k.height as f64 * s).round() as u32).max(1);
    let (sx, sy) = (width as f64 / k.width as f64, height as f64 / k.height as f64);
    CameraIntrinsics {
        fx: k.fx * sx,
        fy: k.fy * sy,
        cx: k.cx * sx,
        cy: k.cy * sy,
        width,
        height,
        ..*k
    }
}

pub fn simulate(args: &SimulateArgs, arguments: Vec<String>) -> Result<(), CliError> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.survey.seed = seed;
    }
    if let Some(d) = args.duration {
        scenario.survey.duration = d;
    }
    if args.noiseless {
        scenario.noise = SimNoise::zero();
    }
    if !(args.map_scale > 0.0 && args.map_scale <= 1.0) {
        return Err(usage("--map-scale must lie in (0, 1]"));
    }
    let out_dir = args.out.resolve("simulate");
    let mut rec = Recorder::new("simulate", arguments, &out_dir);
    if Path::new(&args.scenario).is_file() {
        rec.input(Path::new(&args.scenario))?;
    }
    let scenario_toml = scenario.to_toml()?;
    rec.seed(scenario.survey.seed);
    rec.config(&scenario_toml);

    info!("simulating {} (seed {})", scenario.name, scenario.survey.seed);
    let out = scenario.simulate()?;
    let calib = scenario.calibration.to_calibration()?;
    rec.write("scenario.toml", scenario_toml.as_bytes())?;
    rec.write("calibration.toml", save_calibration(&calib)?.as_bytes())?;
    rec.write("log.jsonl", &write_log_to_vec(&out.log)?)?;
    let truth: Vec<TrajectoryEntry> = out
        .truth
        .iter()
        .map(|s| TrajectoryEntry {
            t: s.t,
            pose: s.state.pose,
        })
        .collect();
    rec.write("groundtruth.txt", write_trajectory(&truth)?.as_bytes())?;

    let times = scenario.keyframe_times(out.duration_ns);
    let init = frontend_init(
        &out.truth,
        &times,
        args.init_sigma_pos,
        args.init_sigma_rot_deg.to_radians(),
        scenario.survey.seed,
    );
    let init: Vec<TrajectoryEntry> = init.into_iter().map(|(t, pose)| TrajectoryEntry { t, pose }).collect();
    rec.write("frontend_init.txt", write_trajectory(&init)?.as_bytes())?;

    let world = LabeledPointCloud {
        points: out
            .world
            .landmarks
            .iter()
            .map(|l| LabeledPoint::new(l.position, l.class))
            .collect(),
    };
    rec.write("world.ply", &export_ply(&world, true)?)?;
    rec.write("reassociation.json", &to_json(&out.reassociation))?;

    if args.maps_every > 0 {
        let mut index = MapIndex::default();
        for &t in times.iter().step_by(args.maps_every) {
            let (state, _) = uwslam::simulator::truth_at(&out.truth, t);
            for cam in calib.rig.cameras() {
                let k = scaled(&cam.intrinsics, args.map_scale);
                let (depth, labels) = render_oracle_maps(&out.world, &(state.pose * cam.extrinsic), &k, args.splat_radius);
                let stem = format!("{t:012}_c{}", cam.id);
                rec.write(&format!("maps/{stem}.depth"), &write_depth_map(&depth))?;
                rec.write(&format!("maps/{stem}.label"), &write_label_map(&labels))?;
                index.frames.push(MapFrame {
                    t,
                    camera_id: cam.id,
                    intrinsics: k,
                    depth: format!("{stem}.depth"),
                    labels: format!("{stem}.label"),
                });
            }
        }
        rec.write(&format!("maps/{MAP_INDEX}"), &to_json(&index))?;
    }
    rec.finish()?;
    println!("{}: {} records, {} keyframes -> {}", scenario.name, out.log.len(), times.len(), out_dir.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct SolveSummary<'a> {
    initial_cost: f64,
    final_cost: f64,
    iterations: usize,
    termination: TerminationReason,
    invalid_factors: usize,
    build: &'a BuildReport,
    history: &'a [IterationRecord],
}

fn solve_config(args: &SolveArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => toml::from_str::<PipelineConfig>(&read_text(p)?)
            .map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => PipelineConfig::default(),
    };
    for s in &args.disable {
        match s {
            Sensor::Vision => cfg.sensors.vision = false,
            Sensor::Imu => cfg.sensors.imu = false,
            Sensor::Dvl => cfg.sensors.dvl = false,
            Sensor::Depth => cfg.sensors.depth = false,
        }
    }
    if args.optimize_extrinsics {
        cfg.optimize_extrinsics = true;
    }
    if let Some(l) = args.loss {
        cfg.robust = l == Loss::Huber;
    }
    if let Some(l) = args.lambda {
        cfg.initial_lambda = l;
    }
    if let Some(n) = args.max_iterations {
        cfg.max_iterations = n;
    }
    if let Some(hz) = args.keyframe_hz {
        cfg.keyframe_hz = hz;
    }
    if let Some(t) = args.tolerance_ns {
        cfg.tolerance_ns = t;
    }
    if !cfg.sensors.any() {
        return Err(usage("every sensor is disabled"));
    }
    if !(cfg.keyframe_hz > 0.0 && cfg.keyframe_hz.is_finite()) {
        return Err(usage("keyframe rate must be positive"));
    }
    Ok(cfg)
}

pub fn solve(args: &SolveArgs, arguments: Vec<String>) -> Result<(), CliError> {
    let cfg = solve_config(args)?;
    let out_dir = args.out.resolve("solve");
    let mut rec = Recorder::new("solve", arguments, &out_dir);
    let cfg_toml = toml::to_string(&cfg).map_err(|e| CliError::Format(e.to_string()))?;
    rec.config(&cfg_toml);

    rec.input(&args.log)?;
    let file = fs::File::open(&args.log).map_err(|e| CliError::file(&args.log, e))?;
    let log = read_log(BufReader::new(file))?;
    rec.input(&args.calibration)?;
    let calib = load_calibration(&read_text(&args.calibration)?)?;
    let vision_only = cfg.sensors.vision && !(cfg.sensors.imu || cfg.sensors.dvl || cfg.sensors.depth);
    if vision_only && calib.rig.len() < 2 {
        return Err(usage("vision-only runs need at least two cameras"));
    }

    let times = keyframe_times(&log, cfg.keyframe_hz);
    let init = match &args.init {
        Some(p) => {
            rec.input(p)?;
            let entries = read_trajectory(&read_text(p)?)?;
            let poses = times
                .iter()
                .map(|t| {
                    entries
                        .iter()
                        .find(|e| (e.t - t).abs() <= ASSOCIATION_TOLERANCE_NS)
                        .map(|e| e.pose)
                        .ok_or_else(|| {
                            CliError::Format(format!("{}: no pose near keyframe t = {t} ns", p.display()))
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Initialization::Poses(poses)
        }
        None => Initialization::DeadReckoning,
    };

    info!("solving {} keyframes", times.len());
    let est = estimate(&log, &calib, &times, &init, &cfg)?;
    let trajectory: Vec<TrajectoryEntry> = est
        .times
        .iter()
        .zip(&est.states)
        .map(|(&t, s)| TrajectoryEntry { t, pose: s.pose })
        .collect();
    rec.write("trajectory.txt", write_trajectory(&trajectory)?.as_bytes())?;
    // Sparse landmarks carry no semantics; they are written as background.
    let cloud = LabeledPointCloud {
        points: est
            .landmarks
            .values()
            .map(|p| LabeledPoint::new(*p, SemanticClass::Seabed))
            .collect(),
    };
    rec.write("landmarks.ply", &export_ply(&cloud, true)?)?;
    let summary = SolveSummary {
        initial_cost: est.solve.initial_cost,
        final_cost: est.solve.final_cost,
        iterations: est.solve.iterations,
        termination: est.solve.termination,
        invalid_factors: est.solve.invalid_factors,
        build: &est.build,
        history: &est.solve.history,
    };
    rec.write("solve_report.json", &to_json(&summary))?;
    if cfg.optimize_extrinsics {
        let cameras = calib
            .rig
            .cameras()
            .iter()
            .map(|c| {
                let mut c = *c;
                if let Some(e) = est.extrinsics.get(&c.id) {
                    c.extrinsic = *e;
                }
                c
            })
            .collect();
        let refined = CalibrationFile {
            rig: RigCalibration::new(cameras).map_err(|e| CliError::Format(e.to_string()))?,
            ..calib.clone()
        };
        rec.write("calibration.toml", save_calibration(&refined)?.as_bytes())?;
    }
    rec.finish()?;
    println!(
        "{} keyframes, {} landmarks, cost {:.6e} -> {:.6e} in {} iterations -> {}",
        est.states.len(),
        est.landmarks.len(),
        est.solve.initial_cost,
        est.solve.final_cost,
        est.solve.iterations,
        out_dir.display()
    );
    Ok(())
}

pub fn eval(args: &EvalArgs, arguments: Vec<String>) -> Result<(), CliError> {
    if !(args.rpe_delta > 0.0) {
        return Err(usage("--rpe-delta must be positive"));
    }
    let out_dir = args.out.resolve("eval");
    let mut rec = Recorder::new("eval", arguments, &out_dir);
    let mode = match args.align {
        Align::Rigid => AlignMode::Rigid,
        Align::Similarity => AlignMode::Similarity,
    };
    rec.config(&format!("align={mode:?} rpe_delta={}", args.rpe_delta));
    rec.input(&args.estimate)?;
    rec.input(&args.reference)?;
    let est = read_trajectory(&read_text(&args.estimate)?)?;
    let reference = read_trajectory(&read_text(&args.reference)?)?;
    let (m, al) = metrics(&est, &reference, mode, args.rpe_delta)?;
    rec.write("metrics.json", &to_json(&m))?;
    rec.write("errors.csv", errors_csv(&al).as_bytes())?;
    rec.finish()?;
    println!(
        "ATE {:.6} m over {} poses, RPE {:.6} m / {:.4} deg per {} s, endpoint {:.6} m",
        m.ate_rmse, m.pairs, m.rpe_translation_rmse, m.rpe_rotation_rmse_deg, m.rpe_delta, m.endpoint_error
    );
    Ok(())
}

pub fn semantics(args: &SemanticsArgs, arguments: Vec<String>) -> Result<(), CliError> {
    if args.stride == 0 || !(args.voxel > 0.0) || !(args.radius > 0.0) {
        return Err(usage("--stride, --voxel and --radius must be positive"));
    }
    let out_dir = args.out.resolve("semantics");
    let mut rec = Recorder::new("semantics", arguments, &out_dir);
    rec.config(&format!("stride={} voxel={} radius={}", args.stride, args.voxel, args.radius));
    let index_path = args.maps.join(MAP_INDEX);
    rec.input(&index_path)?;
    let index: MapIndex = serde_json::from_str(&read_text(&index_path)?)
        .map_err(|e| CliError::Format(format!("{}: {e}", index_path.display())))?;
    rec.input(&args.trajectory)?;
    let trajectory = read_trajectory(&read_text(&args.trajectory)?)?;
    rec.input(&args.calibration)?;
    let calib = load_calibration(&read_text(&args.calibration)?)?;

    let mut clouds = Vec::with_capacity(index.frames.len());
    for f in &index.frames {
        let Some(entry) = trajectory
            .iter()
            .filter(|e| (e.t - f.t).abs() <= ASSOCIATION_TOLERANCE_NS)
            .min_by_key(|e| (e.t - f.t).abs())
        else {
            log::warn!("no pose for frame at t = {} ns; skipped", f.t);
            continue;
        };
        let cam = calib
            .rig
            .camera(f.camera_id)
            .map_err(|e| CliError::Format(e.to_string()))?;
        let (depth_path, label_path) = (args.maps.join(&f.depth), args.maps.join(&f.labels));
        rec.input(&depth_path)?;
        rec.input(&label_path)?;
        let depth = read_depth_map(&read_bytes(&depth_path)?)?;
        let labels = read_label_map(&read_bytes(&label_path)?)?;
        clouds.push(project_labels(&(entry.pose * cam.extrinsic), &f.intrinsics, &depth, &labels, args.stride)?);
    }
    let fused = fuse(&clouds, args.voxel)?;
    rec.write("semantic.ply", &export_ply(&fused, !args.ascii)?)?;
    let hist = fused.class_histogram();
    if let Some(gt_path) = &args.ground_truth {
        rec.input(gt_path)?;
        let bytes = read_bytes(gt_path)?;
        let gt: Vec<_> = import_ply(&bytes)?.points.iter().map(|p| (p.position, p.class)).collect();
        let report = consistency_report(&fused, &gt, args.radius)?;
        rec.write("consistency.json", &to_json(&report))?;
        println!("accuracy {:.4} over {} matched points", report.accuracy, report.matched);
    }
    rec.finish()?;
    println!(
        "{} frames, {} fused points (seabed {}, pipeline {}, support {}) -> {}",
        clouds.len(),
        fused.len(),
        hist[0],
        hist[1],
        hist[2],
        out_dir.display()
    );
    Ok(())
}

fn read_bytes(p: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(p).map_err(|e| CliError::file(p, e))
}

#[derive(Debug, Serialize)]
struct ReportRow {
    label: String,
    source: String,
    metrics: Metrics,
}

pub fn report(args: &ReportArgs, arguments: Vec<String>) -> Result<(), CliError> {
    let out_dir = args.out.resolve("report");
    let mut rec = Recorder::new("report", arguments, &out_dir);
    let mut rows = Vec::new();
    let mut seen = BTreeMap::new();
    for run in &args.runs {
        let (label, path) = run
            .split_once('=')
            .ok_or_else(|| usage(format!("--run {run}: expected LABEL=PATH")))?;
        if seen.insert(label.to_string(), ()).is_some() {
            return Err(usage(format!("--run label {label} given twice")));
        }
        let mut path = PathBuf::from(path);
        if path.is_dir() {
            path = path.join("metrics.json");
        }
        rec.input(&path)?;
        let metrics: Metrics = serde_json::from_str(&read_text(&path)?)
            .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        rows.push(ReportRow {
            label: label.into(),
            source: path.display().to_string(),
            metrics,
        });
    }
    rec.config(&args.runs.join("\n"));
    let mut table = String::from(
        "| run | poses | ATE RMSE (m) | ATE max (m) | RPE trans (m) | RPE rot (deg) | endpoint (m) |\n\
         |---|---|---|---|---|---|---|\n",
    );
    for r in &rows {
        let m = &r.metrics;
        writeln!(
            table,
            "| {} | {} | {:.6} | {:.6} | {:.6} | {:.4} | {:.6} |",
            r.label, m.pairs, m.ate_rmse, m.ate_max, m.rpe_translation_rmse, m.rpe_rotation_rmse_deg, m.endpoint_error
        )
        .expect("writing to a String cannot fail");
    }
    rec.write("report.md", table.as_bytes())?;
    rec.write("report.json", &to_json(&rows))?;
    rec.finish()?;
    print!("{table}");
    Ok(())
}
