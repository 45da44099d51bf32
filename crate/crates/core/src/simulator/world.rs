//! Landmark worlds sampled on simple surface primitives.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{Rotation, Vec3};
use crate::semantics::SemanticClass;

/// Surfaces that landmarks are scattered on. Normals point toward the side
/// a camera can see the landmark from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Horizontal rectangle facing up, `extent` = (north, east) side lengths.
    Plane { center: Vec3, extent: [f64; 2] },
    /// Box resting with its bottom face at `center.z + half_extents.z`;
    /// the bottom face carries no landmarks.
    Box {
        center: Vec3,
        half_extents: Vec3,
        #[serde(default)]
        yaw: f64,
    },
    /// Lateral surface of a cylinder between two axis points.
    Cylinder { start: Vec3, end: Vec3, radius: f64 },
}

impl Shape {
    pub fn area(&self) -> f64 {
        match self {
            Shape::Plane { extent, .. } => extent[0] * extent[1],
            Shape::Box { half_extents: h, .. } => {
                4.0 * h.x * h.y + 8.0 * h.z * (h.x + h.y)
            }
            Shape::Cylinder { start, end, radius } => TAU * radius * (end - start).norm(),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let ok = match self {
            Shape::Plane { center, extent } => {
                center.iter().all(|x| x.is_finite()) && extent[0] > 0.0 && extent[1] > 0.0
            }
            Shape::Box {
                center,
                half_extents,
                yaw,
            } => {
                center.iter().all(|x| x.is_finite())
                    && half_extents.iter().all(|x| *x > 0.0 && x.is_finite())
                    && yaw.is_finite()
            }
            Shape::Cylinder { start, end, radius } => {
                start.iter().chain(end.iter()).all(|x| x.is_finite())
                    && (end - start).norm() > 0.0
                    && *radius > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidSpec(format!("degenerate shape {self:?}")))
        }
    }

    /// Uniform sample on the surface, with its outward normal.
    fn sample(&self, rng: &mut impl Rng) -> (Vec3, Vec3) {
        let up = Vec3::new(0.0, 0.0, -1.0);
        match self {
            Shape::Plane { center, extent } => {
                let p = center
                    + Vec3::new(
                        rng.random_range(-0.5..0.5) * extent[0],
                        rng.random_range(-0.5..0.5) * extent[1],
                        0.0,
                    );
                (p, up)
            }
            Shape::Box {
                center,
                half_extents: h,
                yaw,
            } => {
                let top = 4.0 * h.x * h.y;
                let side_x = 4.0 * h.y * h.z;
                let side_y = 4.0 * h.x * h.z;
                let pick = rng.random_range(0.0..top + 2.0 * side_x + 2.0 * side_y);
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                let (local, normal) = if pick < top {
                    (Vec3::new(a * h.x, b * h.y, -h.z), up)
                } else if pick < top + 2.0 * side_x {
                    let s = if pick < top + side_x { 1.0 } else { -1.0 };
                    (Vec3::new(s * h.x, a * h.y, b * h.z), Vec3::new(s, 0.0, 0.0))
                } else {
                    let s = if pick < top + 2.0 * side_x + side_y { 1.0 } else { -1.0 };
                    (Vec3::new(a * h.x, s * h.y, b * h.z), Vec3::new(0.0, s, 0.0))
                };
                let r = Rotation::rot_z(*yaw);
                (center + r.rotate(&local), r.rotate(&normal))
            }
            Shape::Cylinder { start, end, radius } => {
                let axis = end - start;
                let dir = axis.normalize();
                let helper = if dir.z.abs() < 0.9 {
                    Vec3::new(0.0, 0.0, 1.0)
                } else {
                    Vec3::new(1.0, 0.0, 0.0)
                };
                let e1 = dir.cross(&helper).normalize();
                let e2 = dir.cross(&e1);
                let s: f64 = rng.random_range(0.0..1.0);
                let phi: f64 = rng.random_range(0.0..TAU);
                let n = e1 * phi.cos() + e2 * phi.sin();
                (start + axis * s + n * *radius, n)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub shape: Shape,
    /// Landmark count; zero means derive it from the world density.
    #[serde(default)]
    pub count: usize,
    pub class: SemanticClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub clusters: Vec<Cluster>,
    /// Landmarks per m², used by clusters with `count = 0`.
    #[serde(default)]
    pub density: f64,
    /// Minimum spacing between landmarks, enforced by rejection.
    #[serde(default)]
    pub min_separation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: usize,
    pub position: Vec3,
    pub normal: Vec3,
    pub class: SemanticClass,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub landmarks: Vec<Landmark>,
}

impl World {
    pub fn labeled_points(&self) -> Vec<(Vec3, SemanticClass)> {
        self.landmarks.iter().map(|l| (l.position, l.class)).collect()
    }
}

const MAX_REJECTIONS: usize = 10_000;

pub fn build_world(spec: &WorldSpec, seed: u64) -> Result<World, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(super::STREAM_WORLD);
    let mut landmarks: Vec<Landmark> = Vec::new();
    for cluster in &spec.clusters {
        cluster.shape.validate()?;
        let count = if cluster.count > 0 {
            cluster.count
        } else {
            (cluster.shape.area() * spec.density).round() as usize
        };
        for _ in 0..count {
            let mut tries = 0;
            let (position, normal) = loop {
                let (p, n) = cluster.shape.sample(&mut rng);
                let clear = spec.min_separation <= 0.0
                    || landmarks
                        .iter()
                        .all(|l| (l.position - p).norm() >= spec.min_separation);
                if clear {
                    break (p, n);
                }
                tries += 1;
                if tries > MAX_REJECTIONS {
                    return Err(SimError::InvalidSpec(
                        "minimum separation too large for the requested landmark count".into(),
                    ));
                }
            };
            landmarks.push(Landmark {
                id: landmarks.len(),
                position,
                normal,
                class: cluster.class,
            });
        }
    }
    if landmarks.is_empty() {
        return Err(SimError::InvalidSpec("world has no landmarks".into()));
    }
    Ok(World { landmarks })
}
