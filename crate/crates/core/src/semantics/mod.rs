//! Semantic point clouds: per-pixel classes lifted through depth maps and
//! camera poses, voxel fusion, and a consistency check against a labeled
//! world.

mod grid;

pub use grid::{read_depth_map, read_label_map, write_depth_map, write_label_map};

use std::collections::{BTreeMap, HashMap};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose, Vec3};

pub const DEFAULT_STRIDE: usize = 4;
pub const DEFAULT_MATCH_RADIUS: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SemanticsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown class id {0}")]
    UnknownClassId(u8),
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid file: {0}")]
    Grid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum SemanticClass {
    Seabed = 0,
    Pipeline = 1,
    PipelineSupport = 2,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; 3] = [Self::Seabed, Self::Pipeline, Self::PipelineSupport];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self, SemanticsError> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or(SemanticsError::UnknownClassId(id))
    }

    pub fn color(self) -> [u8; 3] {
        match self {
            Self::Seabed => [0, 0, 255],
            Self::Pipeline => [255, 255, 0],
            Self::PipelineSupport => [0, 255, 0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Seabed => "seabed",
            Self::Pipeline => "pipeline",
            Self::PipelineSupport => "pipeline_support",
        }
    }
}

/// Depth along the optical axis in meters; 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.data[v * self.width + u]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: Vec3,
    pub class: SemanticClass,
    pub color: [u8; 3],
}

impl LabeledPoint {
    pub fn new(position: Vec3, class: SemanticClass) -> Self {
        Self {
            position,
            class,
            color: class.color(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPointCloud {
    pub points: Vec<LabeledPoint>,
}

impl LabeledPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn class_histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        for p in &self.points {
            h[p.class.id() as usize] += 1;
        }
        h
    }
}

/// Pixel indices sampled along an axis of length `n`: every `stride`-th
/// pixel, starting half a stride in (clamped to the middle of short axes).
pub fn sample_indices(n: usize, stride: usize) -> impl Iterator<Item = usize> {
    let offset = stride.min(n) / 2;
    (offset..n).step_by(stride.max(1))
}

/// Lifts every sampled pixel with positive depth into the world frame.
/// Pixel `(i, j)` sits at image coordinates `(i, j)`.
pub fn project_labels(
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    depth: &DepthMap,
    labels: &LabelMap,
    stride: usize,
) -> Result<LabeledPointCloud, SemanticsError> {
    if stride == 0 {
        return Err(SemanticsError::InvalidParameter("stride must be at least 1".into()));
    }
    if depth.width != labels.width || depth.height != labels.height {
        return Err(SemanticsError::DimensionMismatch(format!(
            "depth {}x{} vs labels {}x{}",
            depth.width, depth.height, labels.width, labels.height
        )));
    }
    if depth.width != intrinsics.width as usize || depth.height != intrinsics.height as usize {
        return Err(SemanticsError::DimensionMismatch(format!(
            "maps {}x{} vs camera {}x{}",
            depth.width, depth.height, intrinsics.width, intrinsics.height
        )));
    }
    if depth.data.len() != depth.width * depth.height || labels.data.len() != labels.width * labels.height
    {
        return Err(SemanticsError::DimensionMismatch("grid data length".into()));
    }
    let mut cloud = LabeledPointCloud::default();
    for v in sample_indices(depth.height, stride) {
        for u in sample_indices(depth.width, stride) {
            let d = depth.get(u, v) as f64;
            if !(d > 0.0 && d.is_finite()) {
                continue;
            }
            let class = SemanticClass::from_id(labels.get(u, v))?;
            let b = intrinsics.bearing(&Vector2::new(u as f64, v as f64));
            let pc = b * (d / b.z);
            cloud.points.push(LabeledPoint::new(pose.transform_point(&pc), class));
        }
    }
    Ok(cloud)
}

fn voxel_key(p: &Vec3, voxel: f64) -> (i64, i64, i64) {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

/// Voxel-grid downsampling. Output points are ordered by voxel index.
pub fn fuse(clouds: &[LabeledPointCloud], voxel: f64) -> Result<LabeledPointCloud, SemanticsError> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(SemanticsError::InvalidParameter("voxel size must be positive".into()));
    }
    let mut cells: BTreeMap<(i64, i64, i64), (Vec3, usize, [usize; 3])> = BTreeMap::new();
    for p in clouds.iter().flat_map(|c| &c.points) {
        let e = cells
            .entry(voxel_key(&p.position, voxel))
            .or_insert((Vec3::zeros(), 0, [0; 3]));
        e.0 += p.position;
        e.1 += 1;
        e.2[p.class.id() as usize] += 1;
    }
    let points = cells
        .into_values()
        .map(|(sum, n, votes)| {
            // max_by_key keeps the last maximum, so scan in reverse to let
            // the lowest id win ties.
            let best = (0..3).rev().max_by_key(|&c| votes[c]).unwrap();
            LabeledPoint::new(sum / n as f64, SemanticClass::ALL[best])
        })
        .collect();
    Ok(LabeledPointCloud { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    /// NaN when no point carries the class.
    pub precision: f64,
    /// NaN when the ground truth has no landmark of the class.
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    /// `confusion[truth][predicted]` over matched points.
    pub confusion: [[usize; 3]; 3],
    pub per_class: [ClassMetrics; 3],
    pub matched: usize,
    pub unmatched: usize,
    /// Correct labels over matched points; NaN if nothing matched.
    pub accuracy: f64,
}

/// Matches every cloud point to its nearest ground-truth landmark within
/// `radius`. Unmatched points count against the precision of their class;
/// a landmark is recalled once any point of its class matches it.
pub fn consistency_report(
    cloud: &LabeledPointCloud,
    ground_truth: &[(Vec3, SemanticClass)],
    radius: f64,
) -> Result<ConsistencyReport, SemanticsError> {
    if ground_truth.is_empty() {
        return Err(SemanticsError::EmptyGroundTruth);
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(SemanticsError::InvalidParameter("radius must be positive".into()));
    }
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, (p, _)) in ground_truth.iter().enumerate() {
        grid.entry(voxel_key(p, radius)).or_default().push(i);
    }
    let mut confusion = [[0usize; 3]; 3];
    let mut predicted = [0usize; 3];
    let mut recalled = vec![false; ground_truth.len()];
    let mut unmatched = 0;
    for point in &cloud.points {
        predicted[point.class.id() as usize] += 1;
        let (kx, ky, kz) = voxel_key(&point.position, radius);
        let mut best: Option<(f64, usize)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(ids) = grid.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for &i in ids {
                        let d = (ground_truth[i].0 - point.position).norm();
                        if d <= radius && best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                            best = Some((d, i));
                        }
                    }
                }
            }
        }
        match best {
            Some((_, i)) => {
                let truth = ground_truth[i].1;
                confusion[truth.id() as usize][point.class.id() as usize] += 1;
                if truth == point.class {
                    recalled[i] = true;
                }
            }
            None => unmatched += 1,
        }
    }
    let mut per_class = [ClassMetrics {
        precision: f64::NAN,
        recall: f64::NAN,
    }; 3];
    for c in 0..3 {
        if predicted[c] > 0 {
            per_class[c].precision = confusion[c][c] as f64 / predicted[c] as f64;
        }
        let total = ground_truth.iter().filter(|(_, k)| k.id() as usize == c).count();
        if total > 0 {
            let hit = ground_truth
                .iter()
                .zip(&recalled)
                .filter(|((_, k), r)| k.id() as usize == c && **r)
                .count();
            per_class[c].recall = hit as f64 / total as f64;
        }
    }
    let matched = cloud.points.len() - unmatched;
    let correct: usize = (0..3).map(|c| confusion[c][c]).sum();
    let accuracy = if matched > 0 {
        correct as f64 / matched as f64
    } else {
        f64::NAN
    };
    Ok(ConsistencyReport {
        confusion,
        per_class,
        matched,
        unmatched,
        accuracy,
    })
}
