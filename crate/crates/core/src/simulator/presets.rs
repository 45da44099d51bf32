//! Scenario files and the built-in desk-scale presets.

use serde::{Deserialize, Serialize};

use super::synth::{synthesize_log, Blackout, DegradationSchedule, SensorRates, SimNoise, SimOutput};
use super::trajectory::{generate_trajectory, Pattern, SurveySpec};
use super::world::{build_world, Cluster, Shape, WorldSpec};
use super::SimError;
use crate::geometry::Vec3;
use crate::io::{CalibrationDoc, CameraDoc, ExtrinsicDoc, IoError};
use crate::semantics::SemanticClass;

fn default_keyframe_hz() -> f64 {
    10.0
}

/// Everything needed to regenerate a survey: path, world, sensors and
/// degradation. Stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub survey: SurveySpec,
    pub world: WorldSpec,
    #[serde(default)]
    pub noise: SimNoise,
    #[serde(default)]
    pub rates: SensorRates,
    #[serde(default)]
    pub schedule: DegradationSchedule,
    #[serde(default = "default_keyframe_hz")]
    pub keyframe_hz: f64,
    pub calibration: CalibrationDoc,
}

impl Scenario {
    /// Runs the simulator with the survey seed driving every random stream.
    pub fn simulate(&self) -> Result<SimOutput, SimError> {
        let calib = self
            .calibration
            .to_calibration()
            .map_err(|e| SimError::InvalidSpec(e.to_string()))?;
        let mut survey = self.survey.clone();
        survey.sample_hz = self.rates.imu_hz;
        let traj = generate_trajectory(&survey)?;
        let world = build_world(&self.world, survey.seed)?;
        synthesize_log(&traj, &world, &calib, &self.noise, &self.rates, &self.schedule, survey.seed)
    }

    /// Keyframe timestamps: every `1/keyframe_hz` seconds that is also a
    /// camera frame time, over the logged span.
    pub fn keyframe_times(&self, duration_ns: i64) -> Vec<i64> {
        let step = (1e9 / self.keyframe_hz).round() as i64;
        (0..).map(|k| k * step).take_while(|&t| t < duration_ns.max(1)).collect()
    }

    pub fn from_toml(text: &str) -> Result<Self, IoError> {
        toml::from_str(text).map_err(|e| IoError::Schema(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, IoError> {
        toml::to_string(self).map_err(|e| IoError::Serialize(e.to_string()))
    }
}

pub const PRESET_NAMES: [&str; 5] = ["hercules_small", "plm", "tbs", "pipeline", "synthetic_wreck"];

pub fn preset_names() -> &'static [&'static str] {
    &PRESET_NAMES
}

fn camera(id: u32, width: u32, height: u32, hfov_deg: f64, yaw_deg: f64, pitch_deg: f64, t: [f64; 3]) -> CameraDoc {
    let k = crate::geometry::CameraIntrinsics::from_fov(width, height, hfov_deg.to_radians());
    CameraDoc {
        id,
        width,
        height,
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        k1: 0.0,
        k2: 0.0,
        extrinsic: ExtrinsicDoc {
            rotation: None,
            yaw_deg: Some(yaw_deg),
            pitch_deg: Some(pitch_deg),
            translation: t,
        },
    }
}

/// DWE StellarHD: 1600×1200, 82° horizontal field of view in water.
fn dwe(id: u32, yaw_deg: f64, pitch_deg: f64, t: [f64; 3]) -> CameraDoc {
    camera(id, 1600, 1200, 82.0, yaw_deg, pitch_deg, t)
}

fn calibration(camera: Vec<CameraDoc>) -> CalibrationDoc {
    CalibrationDoc {
        camera,
        dvl: ExtrinsicDoc {
            translation: [-0.5, 0.0, 0.6],
            ..Default::default()
        },
        imu: ExtrinsicDoc::default(),
    }
}

fn three_camera_rig(pitch_deg: f64, yaw_out_deg: f64) -> CalibrationDoc {
    calibration(vec![
        dwe(0, 0.0, pitch_deg, [1.2, 0.0, 0.3]),
        dwe(1, -yaw_out_deg, pitch_deg, [1.15, -0.25, 0.3]),
        dwe(2, yaw_out_deg, pitch_deg, [1.15, 0.25, 0.3]),
    ])
}

fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

fn wreck_world(seabed: f64, hull: usize, bed: usize) -> WorldSpec {
    WorldSpec {
        clusters: vec![
            Cluster {
                shape: Shape::Box {
                    center: v(0.0, 0.0, seabed - 1.0),
                    half_extents: v(4.0, 1.5, 1.0),
                    yaw: 0.3,
                },
                count: hull,
                class: SemanticClass::Seabed,
            },
            Cluster {
                shape: Shape::Plane {
                    center: v(0.0, 0.0, seabed),
                    extent: [18.0, 18.0],
                },
                count: bed,
                class: SemanticClass::Seabed,
            },
        ],
        density: 0.0,
        min_separation: 0.05,
    }
}

fn base(name: &str, survey: SurveySpec, world: WorldSpec, calibration: CalibrationDoc) -> Scenario {
    Scenario {
        name: name.into(),
        survey,
        world,
        noise: SimNoise::default(),
        rates: SensorRates::default(),
        schedule: DegradationSchedule::default(),
        keyframe_hz: default_keyframe_hz(),
        calibration,
    }
}

pub fn preset(name: &str) -> Result<Scenario, SimError> {
    let survey = |pattern: Pattern, speed: f64, duration: f64| SurveySpec {
        pattern,
        speed,
        duration,
        seed: 0,
        sample_hz: 500,
        attitude_amplitude: 0.0,
    };
    Ok(match name {
        // Concentric circles around a wreck; three cameras tilted 30° with
        // the outer pair turned out by 30°.
        "hercules_small" => base(
            name,
            survey(
                Pattern::ConcentricCircles {
                    center: v(0.0, 0.0, 25.0),
                    radii: vec![5.0],
                    altitude_range: [4.0, 4.0],
                },
                0.5,
                60.0,
            ),
            wreck_world(25.0, 70, 50),
            three_camera_rig(30.0, 30.0),
        ),
        // Circles around a subsea module with a feature-less transit that
        // blinds the cameras for 10 s; two cameras tilted 45°.
        "plm" => {
            let mut s = base(
                name,
                survey(
                    Pattern::ConcentricCircles {
                        center: v(0.0, 0.0, 30.0),
                        radii: vec![4.5, 5.5],
                        altitude_range: [3.0, 4.0],
                    },
                    0.4,
                    90.0,
                ),
                WorldSpec {
                    clusters: vec![
                        Cluster {
                            shape: Shape::Box {
                                center: v(0.0, 0.0, 28.5),
                                half_extents: v(2.0, 2.0, 1.5),
                                yaw: 0.0,
                            },
                            count: 80,
                            class: SemanticClass::Seabed,
                        },
                        Cluster {
                            shape: Shape::Plane {
                                center: v(0.0, 0.0, 30.0),
                                extent: [16.0, 16.0],
                            },
                            count: 100,
                            class: SemanticClass::Seabed,
                        },
                    ],
                    density: 0.0,
                    min_separation: 0.05,
                },
                calibration(vec![
                    dwe(0, 0.0, 45.0, [1.2, 0.0, 0.3]),
                    dwe(1, 30.0, 45.0, [1.15, 0.25, 0.3]),
                ]),
            );
            s.schedule.blackouts.push(Blackout {
                start: 40.0,
                end: 50.0,
                recognition: 0.5,
            });
            s
        }
        // A short loop close to the seafloor seen by a forward stereo pair.
        "tbs" => {
            let mut s = base(
                name,
                survey(
                    Pattern::ReturnLoop {
                        waypoints: vec![
                            v(0.0, 0.0, 6.0),
                            v(6.0, 0.0, 6.0),
                            v(10.0, 2.0, 6.0),
                            v(10.0, 7.0, 6.0),
                            v(6.0, 9.0, 6.0),
                            v(0.0, 9.0, 6.0),
                            v(-3.0, 5.0, 6.0),
                        ],
                    },
                    0.4,
                    90.0,
                ),
                WorldSpec {
                    clusters: vec![
                        Cluster {
                            shape: Shape::Plane {
                                center: v(3.5, 4.5, 8.0),
                                extent: [22.0, 20.0],
                            },
                            count: 220,
                            class: SemanticClass::Seabed,
                        },
                        Cluster {
                            shape: Shape::Box {
                                center: v(4.0, 4.5, 7.6),
                                half_extents: v(1.0, 1.5, 0.4),
                                yaw: 0.5,
                            },
                            count: 30,
                            class: SemanticClass::Seabed,
                        },
                    ],
                    density: 0.0,
                    min_separation: 0.05,
                },
                calibration(vec![
                    camera(0, 1280, 800, 72.0, 0.0, 20.0, [1.0, -0.0375, 0.2]),
                    camera(1, 1280, 800, 72.0, 0.0, 20.0, [1.0, 0.0375, 0.2]),
                ]),
            );
            s.rates.camera_hz = 60.0;
            s
        }
        // Lanes over a pipeline resting on supports; three cameras tilted
        // 45°, all facing forward.
        "pipeline" => {
            let mut clusters = vec![
                Cluster {
                    shape: Shape::Cylinder {
                        start: v(-14.0, 0.0, 69.35),
                        end: v(14.0, 0.0, 69.35),
                        radius: 0.35,
                    },
                    count: 120,
                    class: SemanticClass::Pipeline,
                },
                Cluster {
                    shape: Shape::Plane {
                        center: v(0.0, 1.0, 70.0),
                        extent: [40.0, 16.0],
                    },
                    count: 240,
                    class: SemanticClass::Seabed,
                },
            ];
            for k in 0..7 {
                clusters.push(Cluster {
                    shape: Shape::Box {
                        center: v(-12.0 + 4.0 * k as f64, 0.0, 69.85),
                        half_extents: v(0.25, 0.7, 0.15),
                        yaw: 0.0,
                    },
                    count: 8,
                    class: SemanticClass::PipelineSupport,
                });
            }
            base(
                name,
                survey(
                    Pattern::Lawnmower {
                        origin: v(-12.0, -2.0, 66.5),
                        extent: [24.0, 4.0],
                        spacing: 2.0,
                    },
                    0.5,
                    120.0,
                ),
                WorldSpec {
                    clusters,
                    density: 0.0,
                    min_separation: 0.05,
                },
                calibration(vec![
                    dwe(0, 0.0, 45.0, [1.2, 0.0, 0.3]),
                    dwe(1, 0.0, 45.0, [1.2, -0.3, 0.3]),
                    dwe(2, 0.0, 45.0, [1.2, 0.3, 0.3]),
                ]),
            )
        }
        "synthetic_wreck" => base(
            name,
            survey(
                Pattern::ConcentricCircles {
                    center: v(0.0, 0.0, 25.0),
                    radii: vec![6.0],
                    altitude_range: [4.0, 4.0],
                },
                0.5,
                71.0,
            ),
            wreck_world(25.0, 80, 60),
            three_camera_rig(30.0, 30.0),
        ),
        other => return Err(SimError::UnknownPreset(other.to_string())),
    })
}
