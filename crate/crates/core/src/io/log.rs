//! Line-record sensor log: one JSON object per line after a header line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geometry::{CameraId, Vec3};
use crate::sensors::{DepthSample, DvlSample, ImuSample};

pub const LOG_FORMAT: &str = "uwslam-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub track_id: u64,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Imu {
        gyro: Vec3,
        accel: Vec3,
    },
    Dvl {
        velocity: Vec3,
        valid: [bool; 3],
    },
    Depth {
        depth: f64,
    },
    Camera {
        camera_id: CameraId,
        observations: Vec<Observation>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Nanoseconds since the start of the survey.
    pub t: i64,
    #[serde(flatten)]
    pub payload: Payload,
}

impl LogRecord {
    pub fn imu(s: &ImuSample) -> Self {
        Self {
            t: s.t,
            payload: Payload::Imu {
                gyro: s.gyro,
                accel: s.accel,
            },
        }
    }

    pub fn dvl(s: &DvlSample) -> Self {
        Self {
            t: s.t,
            payload: Payload::Dvl {
                velocity: s.velocity_body,
                valid: s.valid,
            },
        }
    }

    pub fn depth(s: &DepthSample) -> Self {
        Self {
            t: s.t,
            payload: Payload::Depth { depth: s.depth },
        }
    }

    pub fn as_imu(&self) -> Option<ImuSample> {
        match &self.payload {
            Payload::Imu { gyro, accel } => Some(ImuSample {
                t: self.t,
                gyro: *gyro,
                accel: *accel,
            }),
            _ => None,
        }
    }

    pub fn as_dvl(&self) -> Option<DvlSample> {
        match &self.payload {
            Payload::Dvl { velocity, valid } => Some(DvlSample {
                t: self.t,
                velocity_body: *velocity,
                valid: *valid,
            }),
            _ => None,
        }
    }

    pub fn as_depth(&self) -> Option<DepthSample> {
        match &self.payload {
            Payload::Depth { depth } => Some(DepthSample {
                t: self.t,
                depth: *depth,
            }),
            _ => None,
        }
    }

    /// Stable rank used to order records sharing a timestamp.
    pub fn kind_rank(&self) -> (u8, CameraId) {
        match &self.payload {
            Payload::Imu { .. } => (0, 0),
            Payload::Dvl { .. } => (1, 0),
            Payload::Depth { .. } => (2, 0),
            Payload::Camera { camera_id, .. } => (3, *camera_id),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Sorts records by time, then by kind, preserving the order of equal keys.
pub fn sort_records(records: &mut [LogRecord]) {
    records.sort_by_key(|r| (r.t, r.kind_rank()));
}

pub fn write_log<W: Write>(records: &[LogRecord], mut out: W) -> Result<(), IoError> {
    let header = Header {
        format: LOG_FORMAT.into(),
        version: LOG_VERSION,
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| IoError::Serialize(e.to_string()))?;
    out.write_all(b"\n")?;
    let mut previous = i64::MIN;
    for r in records {
        if r.t < previous || r.t < 0 {
            return Err(IoError::NonMonotonicTimestamps {
                previous,
                next: r.t,
            });
        }
        previous = r.t;
        serde_json::to_writer(&mut out, r).map_err(|e| IoError::Serialize(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_log_to_vec(records: &[LogRecord]) -> Result<Vec<u8>, IoError> {
    let mut buf = Vec::new();
    write_log(records, &mut buf)?;
    Ok(buf)
}

pub fn read_log<R: BufRead>(input: R) -> Result<Vec<LogRecord>, IoError> {
    let mut records = Vec::new();
    let mut previous = i64::MIN;
    let mut saw_header = false;
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            let h: Header = serde_json::from_str(&line).map_err(|e| IoError::Parse {
                line: line_no,
                message: format!("bad header: {e}"),
            })?;
            if h.format != LOG_FORMAT || h.version != LOG_VERSION {
                return Err(IoError::Parse {
                    line: line_no,
                    message: format!("unsupported log {} v{}", h.format, h.version),
                });
            }
            saw_header = true;
            continue;
        }
        let r: LogRecord = serde_json::from_str(&line).map_err(|e| IoError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if r.t < 0 {
            return Err(IoError::Parse {
                line: line_no,
                message: format!("negative timestamp {}", r.t),
            });
        }
        if r.t < previous {
            return Err(IoError::NonMonotonicTimestamps {
                previous,
                next: r.t,
            });
        }
        previous = r.t;
        records.push(r);
    }
    if !saw_header {
        return Err(IoError::Parse {
            line: 1,
            message: "missing header".into(),
        });
    }
    Ok(records)
}
