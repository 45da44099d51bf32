//! PLY 1.0 export of labeled point clouds, ASCII or binary little-endian.

use super::IoError;
use crate::semantics::{LabeledPoint, LabeledPointCloud, SemanticClass};
use crate::geometry::Vec3;

const PROPERTIES: &str = "property float x\n\
property float y\n\
property float z\n\
property uchar red\n\
property uchar green\n\
property uchar blue\n\
property uchar label\n";

pub fn export_ply(cloud: &LabeledPointCloud, binary: bool) -> Result<Vec<u8>, IoError> {
    for (index, p) in cloud.points.iter().enumerate() {
        if !p.position.iter().all(|x| x.is_finite() && (*x as f32).is_finite()) {
            return Err(IoError::NonFinitePoint { index });
        }
    }
    let format = if binary { "binary_little_endian" } else { "ascii" };
    let mut out = format!(
        "ply\nformat {format} 1.0\nelement vertex {}\n{PROPERTIES}end_header\n",
        cloud.points.len()
    )
    .into_bytes();
    for p in &cloud.points {
        let xyz = [p.position.x as f32, p.position.y as f32, p.position.z as f32];
        let [r, g, b] = p.color;
        if binary {
            for c in xyz {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&[r, g, b, p.class.id()]);
        } else {
            out.extend_from_slice(
                format!("{} {} {} {r} {g} {b} {}\n", xyz[0], xyz[1], xyz[2], p.class.id()).as_bytes(),
            );
        }
    }
    Ok(out)
}

fn parse_err(message: impl Into<String>) -> IoError {
    IoError::Parse {
        line: 0,
        message: message.into(),
    }
}

/// Reads back files in exactly the layout [`export_ply`] writes.
pub fn import_ply(bytes: &[u8]) -> Result<LabeledPointCloud, IoError> {
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| parse_err("missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| parse_err("header is not UTF-8"))?;
    let body = &bytes[end + marker.len()..];
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(parse_err("missing ply magic"));
    }
    let binary = match lines.next() {
        Some("format ascii 1.0") => false,
        Some("format binary_little_endian 1.0") => true,
        other => return Err(parse_err(format!("unsupported format line {other:?}"))),
    };
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| parse_err("missing vertex count"))?;
    let props: String = lines.map(|l| format!("{l}\n")).collect();
    if props != PROPERTIES {
        return Err(parse_err("unexpected vertex properties"));
    }
    let make = |x: f32, y: f32, z: f32, rgb: [u8; 3], label: u8| -> Result<LabeledPoint, IoError> {
        let class = SemanticClass::from_id(label).map_err(|e| parse_err(e.to_string()))?;
        Ok(LabeledPoint {
            position: Vec3::new(x as f64, y as f64, z as f64),
            class,
            color: rgb,
        })
    };
    let mut points = Vec::with_capacity(count);
    if binary {
        if body.len() != count * 16 {
            return Err(parse_err(format!("expected {} body bytes, found {}", count * 16, body.len())));
        }
        for c in body.chunks_exact(16) {
            let f = |k: usize| f32::from_le_bytes([c[k], c[k + 1], c[k + 2], c[k + 3]]);
            points.push(make(f(0), f(4), f(8), [c[12], c[13], c[14]], c[15])?);
        }
    } else {
        let text = std::str::from_utf8(body).map_err(|_| parse_err("body is not UTF-8"))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(parse_err(format!("vertex line `{line}`")));
            }
            let num = |s: &str| s.parse::<f32>().map_err(|_| parse_err(format!("bad float `{s}`")));
            let byte = |s: &str| s.parse::<u8>().map_err(|_| parse_err(format!("bad uchar `{s}`")));
            points.push(make(
                num(f[0])?,
                num(f[1])?,
                num(f[2])?,
                [byte(f[3])?, byte(f[4])?, byte(f[5])?],
                byte(f[6])?,
            )?);
        }
        if points.len() != count {
            return Err(parse_err(format!("header says {count} vertices, body has {}", points.len())));
        }
    }
    Ok(LabeledPointCloud { points })
}
