//! TUM-style trajectories: `t x y z qx qy qz qw` per line, `t` in seconds
//! with exactly nine decimals, the remaining fields in shortest round-trip
//! form. Lines starting with `#` are comments.

use std::fmt::Write as _;

use super::IoError;
use crate::geometry::{Pose, Rotation, Vec3};

pub const UNIT_QUATERNION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    /// Nanoseconds.
    pub t: i64,
    pub pose: Pose,
}

pub fn format_timestamp(t: i64) -> String {
    let sign = if t < 0 { "-" } else { "" };
    let a = t.unsigned_abs();
    format!("{sign}{}.{:09}", a / 1_000_000_000, a % 1_000_000_000)
}

/// Parses decimal seconds into nanoseconds without going through floating
/// point. More than nine decimals are rejected.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() || frac.len() > 9 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let secs: i64 = int.parse().ok()?;
    let mut nanos: i64 = 0;
    for (i, b) in frac.bytes().enumerate() {
        nanos += (b - b'0') as i64 * 10i64.pow(8 - i as u32);
    }
    let v = secs.checked_mul(1_000_000_000)?.checked_add(nanos)?;
    Some(if neg { -v } else { v })
}

pub fn write_trajectory(entries: &[TrajectoryEntry]) -> Result<String, IoError> {
    let mut out = String::from("# t x y z qx qy qz qw\n");
    let mut previous: Option<i64> = None;
    for e in entries {
        if previous.is_some_and(|p| e.t <= p) {
            return Err(IoError::NonMonotonicTimestamps {
                previous: previous.unwrap(),
                next: e.t,
            });
        }
        previous = Some(e.t);
        let [w, x, y, z] = e.pose.rotation.wxyz();
        let p = e.pose.translation;
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            format_timestamp(e.t),
            p.x,
            p.y,
            p.z,
            x,
            y,
            z,
            w
        )
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

pub fn read_trajectory(text: &str) -> Result<Vec<TrajectoryEntry>, IoError> {
    let mut out: Vec<TrajectoryEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| IoError::Parse {
            line: line_no,
            message: m,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let t = parse_timestamp(fields[0]).ok_or_else(|| err(format!("bad timestamp `{}`", fields[0])))?;
        let mut v = [0.0; 7];
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(format!("bad number `{f}`")))?;
        }
        let norm = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
        if (norm - 1.0).abs() > UNIT_QUATERNION_TOLERANCE {
            return Err(err(format!("quaternion norm {norm} is not unit")));
        }
        let rotation = Rotation::from_wxyz(v[6], v[3], v[4], v[5])
            .ok_or_else(|| err("degenerate quaternion".into()))?;
        if let Some(prev) = out.last() {
            if t <= prev.t {
                return Err(IoError::NonMonotonicTimestamps {
                    previous: prev.t,
                    next: t,
                });
            }
        }
        out.push(TrajectoryEntry {
            t,
            pose: Pose::new(rotation, Vec3::new(v[0], v[1], v[2])),
        });
    }
    Ok(out)
}
