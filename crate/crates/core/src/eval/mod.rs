//! Trajectory alignment and error metrics.

use std::fmt::Write as _;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Rotation, Vec3};
use crate::io::{format_timestamp, TrajectoryEntry};

/// Timestamp tolerance when pairing estimated and reference poses, ns.
pub const ASSOCIATION_TOLERANCE_NS: i64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("only {pairs} associated pose pairs, need at least 3")]
    InsufficientOverlap { pairs: usize },
    #[error("associated positions are collinear")]
    DegenerateConfiguration,
    #[error("trajectories span less than the {delta} s offset")]
    InsufficientSpan { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    #[default]
    Rigid,
    Similarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// Estimate relative to the reference: `est ≈ scale·R·ref + t`.
    pub transform: Pose,
    /// 1 in rigid mode.
    pub scale: f64,
    pub ate_rmse: f64,
    /// `(t, error)` per associated pose.
    pub errors: Vec<(i64, f64)>,
}

/// Index pairs `(est, ref)` whose timestamps differ by at most `tolerance`;
/// each reference pose is used once, by its nearest estimate.
pub fn associate_poses(
    est: &[TrajectoryEntry],
    reference: &[TrajectoryEntry],
    tolerance: i64,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut last_ref = None;
    for (i, e) in est.iter().enumerate() {
        let j = reference.partition_point(|r| r.t < e.t);
        let best = [j.checked_sub(1), Some(j)]
            .into_iter()
            .flatten()
            .filter(|&j| j < reference.len())
            .min_by_key(|&j| (reference[j].t - e.t).abs());
        if let Some(j) = best {
            if (reference[j].t - e.t).abs() <= tolerance && last_ref != Some(j) {
                out.push((i, j));
                last_ref = Some(j);
            }
        }
    }
    out
}

/// Closed-form least-squares alignment of associated positions (Umeyama).
/// The error is measured in the reference frame after mapping the estimate
/// onto it.
pub fn align(
    est: &[TrajectoryEntry],
    reference: &[TrajectoryEntry],
    mode: AlignMode,
) -> Result<AlignmentResult, EvalError> {
    let pairs = associate_poses(est, reference, ASSOCIATION_TOLERANCE_NS);
    if pairs.len() < 3 {
        return Err(EvalError::InsufficientOverlap { pairs: pairs.len() });
    }
    let n = pairs.len() as f64;
    let src: Vec<Vec3> = pairs.iter().map(|&(i, _)| est[i].pose.translation).collect();
    let dst: Vec<Vec3> = pairs.iter().map(|&(_, j)| reference[j].pose.translation).collect();
    let mu_s = src.iter().sum::<Vec3>() / n;
    let mu_d = dst.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut src_cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(&dst) {
        let (a, b) = (s - mu_s, d - mu_d);
        cov += b * a.transpose();
        src_cov += a * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= n;
    var_s /= n;
    let sv = src_cov.singular_values();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[1] > 1e-12 * sorted[0].max(1e-300)) {
        return Err(EvalError::DegenerateConfiguration);
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    // est → ref: x ↦ c·R·x + t
    let r = u * d * vt;
    let c = match mode {
        AlignMode::Rigid => 1.0,
        AlignMode::Similarity => svd.singular_values.component_mul(&d.diagonal()).sum() / var_s,
    };
    let t = mu_d - c * r * mu_s;
    let errors: Vec<(i64, f64)> = pairs
        .iter()
        .zip(src.iter().zip(&dst))
        .map(|(&(i, _), (s, d))| (est[i].t, (d - (c * r * s + t)).norm()))
        .collect();
    let ate_rmse = (errors.iter().map(|(_, e)| e * e).sum::<f64>() / n).sqrt();
    // Report the inverse, which places the estimate relative to the reference.
    let rt = r.transpose();
    let transform = Pose::new(Rotation::from_matrix(&rt), -(rt * t) / c);
    let scale = 1.0 / c;
    Ok(AlignmentResult {
        transform,
        scale,
        ate_rmse,
        errors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpeResult {
    /// `(t, translation error m, rotation error rad)` per pair.
    pub pairs: Vec<(i64, f64, f64)>,
    pub translation_rmse: f64,
    pub rotation_rmse: f64,
}

/// Relative pose error over every pair `(t, t + delta)` present in both
/// trajectories.
pub fn rpe(est: &[TrajectoryEntry], reference: &[TrajectoryEntry], delta: f64) -> Result<RpeResult, EvalError> {
    let span = |t: &[TrajectoryEntry]| t.last().map_or(0, |l| l.t) - t.first().map_or(0, |f| f.t);
    let delta_ns = (delta * 1e9).round() as i64;
    if delta_ns <= 0 || span(est) < delta_ns || span(reference) < delta_ns {
        return Err(EvalError::InsufficientSpan { delta });
    }
    let assoc = associate_poses(est, reference, ASSOCIATION_TOLERANCE_NS);
    let mut pairs = Vec::new();
    for (a, &(ei, ri)) in assoc.iter().enumerate() {
        let target = reference[ri].t + delta_ns;
        let next = assoc[a..]
            .iter()
            .min_by_key(|(_, rj)| (reference[*rj].t - target).abs())
            .filter(|(_, rj)| (reference[*rj].t - target).abs() <= ASSOCIATION_TOLERANCE_NS);
        let Some(&(ej, rj)) = next else {
            continue;
        };
        let rel_ref = reference[ri].pose.inverse() * reference[rj].pose;
        let rel_est = est[ei].pose.inverse() * est[ej].pose;
        let e = rel_ref.inverse() * rel_est;
        pairs.push((reference[ri].t, e.translation.norm(), e.rotation.angle()));
    }
    if pairs.is_empty() {
        return Err(EvalError::InsufficientSpan { delta });
    }
    let n = pairs.len() as f64;
    Ok(RpeResult {
        translation_rmse: (pairs.iter().map(|p| p.1 * p.1).sum::<f64>() / n).sqrt(),
        rotation_rmse: (pairs.iter().map(|p| p.2 * p.2).sum::<f64>() / n).sqrt(),
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: AlignMode,
    pub pairs: usize,
    pub ate_rmse: f64,
    pub ate_mean: f64,
    pub ate_median: f64,
    pub ate_max: f64,
    pub scale: f64,
    pub rpe_delta: f64,
    pub rpe_translation_rmse: f64,
    pub rpe_rotation_rmse_deg: f64,
    /// Distance between the final estimated and reference positions,
    /// without alignment.
    pub endpoint_error: f64,
}

pub fn metrics(
    est: &[TrajectoryEntry],
    reference: &[TrajectoryEntry],
    mode: AlignMode,
    rpe_delta: f64,
) -> Result<(Metrics, AlignmentResult), EvalError> {
    let al = align(est, reference, mode)?;
    let rp = rpe(est, reference, rpe_delta)?;
    let mut errs: Vec<f64> = al.errors.iter().map(|e| e.1).collect();
    errs.sort_by(f64::total_cmp);
    let n = errs.len();
    let median = if n % 2 == 1 {
        errs[n / 2]
    } else {
        0.5 * (errs[n / 2 - 1] + errs[n / 2])
    };
    let pairs = associate_poses(est, reference, ASSOCIATION_TOLERANCE_NS);
    let &(ei, ri) = pairs.last().expect("alignment succeeded");
    let m = Metrics {
        mode,
        pairs: n,
        ate_rmse: al.ate_rmse,
        ate_mean: errs.iter().sum::<f64>() / n as f64,
        ate_median: median,
        ate_max: errs[n - 1],
        scale: al.scale,
        rpe_delta,
        rpe_translation_rmse: rp.translation_rmse,
        rpe_rotation_rmse_deg: rp.rotation_rmse.to_degrees(),
        endpoint_error: (est[ei].pose.translation - reference[ri].pose.translation).norm(),
    };
    Ok((m, al))
}

/// `t,error` rows, `t` in seconds with nine decimals.
pub fn errors_csv(al: &AlignmentResult) -> String {
    let mut out = String::from("t,ate_error\n");
    for (t, e) in &al.errors {
        writeln!(out, "{},{e}", format_timestamp(*t)).expect("writing to a String cannot fail");
    }
    out
}

#[cfg(test)]
mod tests;
