//! `uwslam`: simulate surveys, solve logs, evaluate trajectories, fuse
//! semantic clouds and tabulate runs.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 when a command
//! fails at run time.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

/// Output root used when `--out` is not given.
pub const OUT_ENV: &str = "UWSLAM_OUT";

#[derive(Debug, Parser)]
#[command(name = "uwslam", version, about = "Underwater multi-sensor SLAM back-end")]
struct Cli {
    /// Log progress to stderr (RUST_LOG takes precedence).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a sensor log and ground truth from a scenario.
    Simulate(SimulateArgs),
    /// Estimate a trajectory from a sensor log and calibration.
    Solve(SolveArgs),
    /// Score an estimated trajectory against a reference (ATE, RPE).
    Eval(EvalArgs),
    /// Project depth and label maps through a trajectory into a fused cloud.
    Semantics(SemanticsArgs),
    /// Tabulate metrics of several runs side by side.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory [default: $UWSLAM_OUT/<command>, else ./uwslam-out/<command>]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl OutArg {
    pub fn resolve(&self, command: &str) -> PathBuf {
        match &self.out {
            Some(p) => p.clone(),
            None => std::env::var_os(OUT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("uwslam-out"))
                .join(command),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Preset name or path to a scenario TOML file.
    #[arg(long)]
    pub scenario: String,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the survey duration, seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Replace all sensor noise with zero.
    #[arg(long)]
    pub noiseless: bool,
    /// Perturbation of the stand-in front-end poses, meters.
    #[arg(long, default_value_t = 0.05)]
    pub init_sigma_pos: f64,
    /// Perturbation of the stand-in front-end poses, degrees.
    #[arg(long, default_value_t = 2.0)]
    pub init_sigma_rot_deg: f64,
    /// Render oracle depth/label maps every N keyframes (0 disables).
    #[arg(long, default_value_t = 0)]
    pub maps_every: usize,
    /// Resolution scale of rendered maps relative to the camera.
    #[arg(long, default_value_t = 0.1)]
    pub map_scale: f64,
    /// Splat radius of each landmark in rendered maps, pixels.
    #[arg(long, default_value_t = 1)]
    pub splat_radius: usize,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sensor {
    Vision,
    Imu,
    Dvl,
    Depth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Loss {
    Huber,
    None,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    /// Pipeline configuration TOML; flags given here take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Initial keyframe poses as a TUM trajectory; dead reckoning if absent.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Sensors to leave out of the graph.
    #[arg(long, value_delimiter = ',')]
    pub disable: Vec<Sensor>,
    /// Refine camera extrinsics (config: optimize_extrinsics).
    #[arg(long)]
    pub optimize_extrinsics: bool,
    /// Reprojection loss (config: robust).
    #[arg(long)]
    pub loss: Option<Loss>,
    /// Initial damping (config: initial_lambda).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Iteration cap (config: max_iterations).
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Keyframe rate, Hz (config: keyframe_hz).
    #[arg(long)]
    pub keyframe_hz: Option<f64>,
    /// DVL/depth association tolerance, ns (config: tolerance_ns).
    #[arg(long)]
    pub tolerance_ns: Option<i64>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Align {
    Rigid,
    Similarity,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, value_enum, default_value_t = Align::Rigid)]
    pub align: Align,
    /// RPE interval, seconds.
    #[arg(long, default_value_t = 1.0)]
    pub rpe_delta: f64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct SemanticsArgs {
    /// Directory with `index.json` and the grid files it names.
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    /// Labeled ground-truth landmarks (PLY) for a consistency report.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long, default_value_t = uwslam::semantics::DEFAULT_STRIDE)]
    pub stride: usize,
    /// Fusion voxel edge, meters.
    #[arg(long, default_value_t = 0.05)]
    pub voxel: f64,
    /// Match radius of the consistency report, meters.
    #[arg(long, default_value_t = uwslam::semantics::DEFAULT_MATCH_RADIUS)]
    pub radius: f64,
    /// Write ASCII instead of binary PLY.
    #[arg(long)]
    pub ascii: bool,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `LABEL=PATH`, where PATH is a metrics.json or a directory holding one.
    #[arg(long = "run", required = true)]
    pub runs: Vec<String>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("io: {0}")]
    Io(#[from] uwslam::io::IoError),
    #[error("simulator: {0}")]
    Sim(#[from] uwslam::simulator::SimError),
    #[error("pipeline: {0}")]
    Pipeline(#[from] uwslam::pipeline::PipelineError),
    #[error("eval: {0}")]
    Eval(#[from] uwslam::eval::EvalError),
    #[error("semantics: {0}")]
    Semantics(#[from] uwslam::semantics::SemanticsError),
    #[error("{0}")]
    Format(String),
}

impl CliError {
    pub fn file(path: &Path, source: std::io::Error) -> Self {
        Self::File {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    // Recorded verbatim in manifests.
    let arguments: Vec<String> = std::env::args().skip(1).collect();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, arguments),
        Command::Solve(a) => commands::solve(a, arguments),
        Command::Eval(a) => commands::eval(a, arguments),
        Command::Semantics(a) => commands::semantics(a, arguments),
        Command::Report(a) => commands::report(a, arguments),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
