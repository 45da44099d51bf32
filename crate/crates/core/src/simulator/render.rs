//! Oracle depth and label images of a landmark world.

use super::synth::observe;
use super::world::World;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::semantics::{DepthMap, LabelMap};

/// Splats each visible landmark over a `(2r+1)²` pixel square at its
/// optical-axis depth, nearest landmark winning. No range limit applies.
pub fn render_oracle_maps(
    world: &World,
    camera_to_world: &Pose,
    intrinsics: &CameraIntrinsics,
    splat_radius: usize,
) -> (DepthMap, LabelMap) {
    let (w, h) = (intrinsics.width as usize, intrinsics.height as usize);
    let mut depth = DepthMap::new(w, h);
    let mut labels = LabelMap::new(w, h);
    let r = splat_radius as i64;
    for lm in &world.landmarks {
        let Some((pc, px)) = observe(lm, camera_to_world, intrinsics, f64::INFINITY) else {
            continue;
        };
        let (cu, cv) = (px.x.round() as i64, px.y.round() as i64);
        let z = pc.z as f32;
        for v in (cv - r)..=(cv + r) {
            for u in (cu - r)..=(cu + r) {
                if u < 0 || v < 0 || u >= w as i64 || v >= h as i64 {
                    continue;
                }
                let i = v as usize * w + u as usize;
                if depth.data[i] == 0.0 || z < depth.data[i] {
                    depth.data[i] = z;
                    labels.data[i] = lm.class.id();
                }
            }
        }
    }
    (depth, labels)
}
