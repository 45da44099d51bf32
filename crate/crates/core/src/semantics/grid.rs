//! Flat binary grids with a one-line text header:
//! `uwslam-grid <kind> <type> <width> <height> <scale>\n` followed by
//! `width * height` little-endian cells in row-major order. Depth cells are
//! `f32` and read as `value * scale` meters; label cells are `u8` class ids.

use super::{DepthMap, LabelMap, SemanticsError};

const MAGIC: &str = "uwslam-grid";

fn header(kind: &str, ty: &str, w: usize, h: usize, scale: f64) -> Vec<u8> {
    format!("{MAGIC} {kind} {ty} {w} {h} {scale}\n").into_bytes()
}

fn parse_header<'a>(
    bytes: &'a [u8],
    kind: &str,
    ty: &str,
) -> Result<(usize, usize, f64, &'a [u8]), SemanticsError> {
    let err = |m: &str| SemanticsError::Grid(m.to_string());
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| err("missing header line"))?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| err("header is not UTF-8"))?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != MAGIC || fields[1] != kind || fields[2] != ty {
        return Err(err(&format!("expected `{MAGIC} {kind} {ty} W H SCALE`, got `{line}`")));
    }
    let w: usize = fields[3].parse().map_err(|_| err("bad width"))?;
    let h: usize = fields[4].parse().map_err(|_| err("bad height"))?;
    let scale: f64 = fields[5].parse().map_err(|_| err("bad scale"))?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(err("scale must be positive"));
    }
    Ok((w, h, scale, &bytes[nl + 1..]))
}

pub fn write_depth_map(map: &DepthMap) -> Vec<u8> {
    let mut out = header("depth", "f32", map.width, map.height, 1.0);
    for d in &map.data {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

pub fn read_depth_map(bytes: &[u8]) -> Result<DepthMap, SemanticsError> {
    let (width, height, scale, body) = parse_header(bytes, "depth", "f32")?;
    if body.len() != width * height * 4 {
        return Err(SemanticsError::DimensionMismatch(format!(
            "{} bytes of depth for a {width}x{height} grid",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if scale == 1.0 { v } else { (v as f64 * scale) as f32 }
        })
        .collect::<Vec<_>>();
    if data.iter().any(|d| !(*d >= 0.0)) {
        return Err(SemanticsError::Grid("negative or NaN depth".into()));
    }
    Ok(DepthMap {
        width,
        height,
        data,
    })
}

pub fn write_label_map(map: &LabelMap) -> Vec<u8> {
    let mut out = header("label", "u8", map.width, map.height, 1.0);
    out.extend_from_slice(&map.data);
    out
}

pub fn read_label_map(bytes: &[u8]) -> Result<LabelMap, SemanticsError> {
    let (width, height, _, body) = parse_header(bytes, "label", "u8")?;
    if body.len() != width * height {
        return Err(SemanticsError::DimensionMismatch(format!(
            "{} bytes of labels for a {width}x{height} grid",
            body.len()
        )));
    }
    Ok(LabelMap {
        width,
        height,
        data: body.to_vec(),
    })
}
