//! Residuals and analytic Jacobians for every factor kind.

use nalgebra::{DMatrix, DVector, Matrix2x3, SMatrix, Vector2, Vector6};

use super::{Factor, FactorKind, GraphError, RobustLoss, Values, VariableKey};
use crate::geometry::{hat, so3_right_jacobian_inv, CameraIntrinsics, GeometryError, Mat3, Pose, Vec3};
use crate::sensors::{
    depth_jacobian, depth_residual, dvl_jacobians, dvl_residual, imu_residual,
    imu_residual_jacobians, bias_walk_residual, NavState, TAN_POS, TAN_ROT,
};

/// A factor linearized at the current estimates. Residual and Jacobians are
/// whitened and scaled by the IRLS weight; `jacobians` follow `factor.keys`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearized {
    pub residual: DVector<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
    pub cost: f64,
}

/// IRLS weight `w(s)` for a whitened residual norm `s`.
pub fn huber_weight(loss: &RobustLoss, s: f64) -> f64 {
    match loss {
        RobustLoss::Huber(delta) if s > *delta => delta / s,
        _ => 1.0,
    }
}

/// `ρ(s)`: `s²/2` inside the threshold, linear outside.
pub fn robust_cost(loss: &RobustLoss, s: f64) -> f64 {
    match loss {
        RobustLoss::Huber(delta) if s > *delta => delta * (s - 0.5 * delta),
        _ => 0.5 * s * s,
    }
}

/// `observed − project((X · C_p)⁻¹ l)`.
pub fn reprojection_residual(
    state: &NavState,
    landmark: &Vec3,
    extrinsic: &Pose,
    intrinsics: &CameraIntrinsics,
    pixel: &Vector2<f64>,
) -> Result<Vector2<f64>, GeometryError> {
    let q = state.pose.inverse_transform_point(landmark);
    let pc = extrinsic.inverse_transform_point(&q);
    Ok(pixel - intrinsics.project(&pc)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReprojectionJacobians {
    pub residual: Vector2<f64>,
    pub d_nav: SMatrix<f64, 2, 15>,
    pub d_landmark: Matrix2x3<f64>,
    pub d_extrinsic: SMatrix<f64, 2, 6>,
}

pub fn reprojection_jacobians(
    state: &NavState,
    landmark: &Vec3,
    extrinsic: &Pose,
    intrinsics: &CameraIntrinsics,
    pixel: &Vector2<f64>,
) -> Result<ReprojectionJacobians, GeometryError> {
    let q = state.pose.inverse_transform_point(landmark);
    let pc = extrinsic.inverse_transform_point(&q);
    let (proj, jp) = intrinsics.project_with_jacobian(&pc)?;
    let crt = extrinsic.rotation.matrix().transpose();
    let a = -jp * crt;

    let mut d_nav = SMatrix::<f64, 2, 15>::zeros();
    d_nav.fixed_view_mut::<2, 3>(0, TAN_POS).copy_from(&(-a));
    d_nav.fixed_view_mut::<2, 3>(0, TAN_ROT).copy_from(&(a * hat(&q)));
    let mut d_extrinsic = SMatrix::<f64, 2, 6>::zeros();
    d_extrinsic.fixed_view_mut::<2, 3>(0, 0).copy_from(&jp);
    d_extrinsic.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-jp * hat(&pc)));
    Ok(ReprojectionJacobians {
        residual: pixel - proj,
        d_nav,
        d_landmark: a * state.pose.rotation.matrix().transpose(),
        d_extrinsic,
    })
}

/// `[R_aᵀ(t − t_a); log(R_aᵀ R)]`.
pub fn pose_prior_residual(pose: &Pose, anchor: &Pose) -> Vector6<f64> {
    let mut r = Vector6::zeros();
    r.fixed_rows_mut::<3>(0)
        .copy_from(&anchor.rotation.inverse_rotate(&(pose.translation - anchor.translation)));
    r.fixed_rows_mut::<3>(3)
        .copy_from(&(anchor.rotation.inverse() * pose.rotation).log());
    r
}

/// Jacobian blocks of [`pose_prior_residual`] for translation and rotation.
fn pose_prior_blocks(pose: &Pose, anchor: &Pose, r: &Vector6<f64>) -> (Mat3, Mat3) {
    let phi = Vec3::new(r[3], r[4], r[5]);
    (
        anchor.rotation.matrix().transpose() * pose.rotation.matrix(),
        so3_right_jacobian_inv(&phi),
    )
}

fn invalid(e: GeometryError) -> GraphError {
    GraphError::InvalidResidual(e.to_string())
}

fn reprojection_inputs<'a>(
    f: &Factor,
    values: &'a Values,
) -> Result<(&'a NavState, &'a Vec3, &'a Pose, &'a CameraIntrinsics), GraphError> {
    let (VariableKey::Nav(n), VariableKey::Landmark(l), VariableKey::Extrinsic(c)) =
        (f.keys[0], f.keys[1], f.keys[2])
    else {
        return Err(GraphError::Arity("reprojection keys".into()));
    };
    let intr = values
        .intrinsics
        .get(&c)
        .ok_or(GraphError::UnknownCamera(c))?;
    Ok((values.nav(n)?, values.landmark(l)?, values.extrinsic(c)?, intr))
}

fn nav_key(key: &VariableKey, values: &Values) -> Result<NavState, GraphError> {
    match key {
        VariableKey::Nav(i) => values.nav(*i).copied(),
        other => Err(GraphError::UnknownVariable(*other)),
    }
}

/// Unwhitened residual.
pub(crate) fn raw_residual(f: &Factor, values: &Values) -> Result<DVector<f64>, GraphError> {
    Ok(match &f.kind {
        FactorKind::Reprojection { pixel, .. } => {
            let (s, l, e, k) = reprojection_inputs(f, values)?;
            let r = reprojection_residual(s, l, e, k, pixel).map_err(invalid)?;
            DVector::from_column_slice(r.as_slice())
        }
        FactorKind::Imu(delta) => {
            let si = nav_key(&f.keys[0], values)?;
            let sj = nav_key(&f.keys[1], values)?;
            let r9 = imu_residual(&si, &sj, delta, &values.gravity);
            let rb = bias_walk_residual(&si, &sj);
            DVector::from_iterator(15, r9.iter().chain(rb.iter()).copied())
        }
        FactorKind::Dvl { sample, gyro, extrinsic } => {
            let s = nav_key(&f.keys[0], values)?;
            DVector::from_column_slice(dvl_residual(&s, sample, extrinsic, gyro).as_slice())
        }
        FactorKind::Depth(sample) => {
            let s = nav_key(&f.keys[0], values)?;
            DVector::from_element(1, depth_residual(&s, sample))
        }
        FactorKind::PriorPose(anchor) => {
            let pose = match f.keys[0] {
                VariableKey::Extrinsic(c) => *values.extrinsic(c)?,
                k => nav_key(&k, values)?.pose,
            };
            DVector::from_column_slice(pose_prior_residual(&pose, anchor).as_slice())
        }
        FactorKind::PriorNavState(anchor) => {
            let s = nav_key(&f.keys[0], values)?;
            DVector::from_column_slice(anchor.local(&s).as_slice())
        }
    })
}

/// Unwhitened residual and Jacobians, one block per key.
pub(crate) fn raw_linearize(
    f: &Factor,
    values: &Values,
) -> Result<(DVector<f64>, Vec<DMatrix<f64>>), GraphError> {
    let dm = |rows: usize, cols: usize, s: &[f64]| DMatrix::from_column_slice(rows, cols, s);
    Ok(match &f.kind {
        FactorKind::Reprojection { pixel, .. } => {
            let (s, l, e, k) = reprojection_inputs(f, values)?;
            let j = reprojection_jacobians(s, l, e, k, pixel).map_err(invalid)?;
            (
                DVector::from_column_slice(j.residual.as_slice()),
                vec![
                    dm(2, 15, j.d_nav.as_slice()),
                    dm(2, 3, j.d_landmark.as_slice()),
                    dm(2, 6, j.d_extrinsic.as_slice()),
                ],
            )
        }
        FactorKind::Imu(delta) => {
            let si = nav_key(&f.keys[0], values)?;
            let sj = nav_key(&f.keys[1], values)?;
            let (r, ji, jj) = imu_residual_jacobians(&si, &sj, delta, &values.gravity);
            (
                DVector::from_column_slice(r.as_slice()),
                vec![dm(15, 15, ji.as_slice()), dm(15, 15, jj.as_slice())],
            )
        }
        FactorKind::Dvl { sample, gyro, extrinsic } => {
            let s = nav_key(&f.keys[0], values)?;
            let j = dvl_jacobians(&s, sample, extrinsic, gyro);
            (
                DVector::from_column_slice(j.residual.as_slice()),
                vec![dm(3, 15, j.d_state.as_slice())],
            )
        }
        FactorKind::Depth(sample) => {
            let s = nav_key(&f.keys[0], values)?;
            (
                DVector::from_element(1, depth_residual(&s, sample)),
                vec![dm(1, 15, depth_jacobian(&s).as_slice())],
            )
        }
        FactorKind::PriorPose(anchor) => {
            let (pose, dim) = match f.keys[0] {
                VariableKey::Extrinsic(c) => (*values.extrinsic(c)?, 6),
                k => (nav_key(&k, values)?.pose, 15),
            };
            let r = pose_prior_residual(&pose, anchor);
            let (jt, jr) = pose_prior_blocks(&pose, anchor, &r);
            let mut j = DMatrix::zeros(6, dim);
            let (ct, cr) = if dim == 6 { (0, 3) } else { (TAN_POS, TAN_ROT) };
            j.view_mut((0, ct), (3, 3)).copy_from(&jt);
            j.view_mut((3, cr), (3, 3)).copy_from(&jr);
            (DVector::from_column_slice(r.as_slice()), vec![j])
        }
        FactorKind::PriorNavState(anchor) => {
            let s = nav_key(&f.keys[0], values)?;
            let r = anchor.local(&s);
            let pr = Vector6::from_iterator(
                r.fixed_rows::<3>(TAN_POS).iter().chain(r.fixed_rows::<3>(TAN_ROT).iter()).copied(),
            );
            let (jt, jr) = pose_prior_blocks(&s.pose, &anchor.pose, &pr);
            let mut j = DMatrix::identity(15, 15);
            j.view_mut((TAN_POS, TAN_POS), (3, 3)).copy_from(&jt);
            j.view_mut((TAN_ROT, TAN_ROT), (3, 3)).copy_from(&jr);
            (DVector::from_column_slice(r.as_slice()), vec![j])
        }
    })
}

pub(crate) fn whitened_residual(f: &Factor, values: &Values) -> Result<DVector<f64>, GraphError> {
    let r = raw_residual(f, values)?;
    let rw = f.noise.sqrt_information() * r;
    if rw.iter().all(|x| x.is_finite()) {
        Ok(rw)
    } else {
        Err(GraphError::InvalidResidual(format!("non-finite {} residual", f.kind.name())))
    }
}

/// Whitened, robustified residual and Jacobians of one factor.
pub fn linearize(f: &Factor, values: &Values) -> Result<Linearized, GraphError> {
    let (r, js) = raw_linearize(f, values)?;
    let l = f.noise.sqrt_information();
    let rw = l * r;
    let s = rw.norm();
    if !s.is_finite() {
        return Err(GraphError::InvalidResidual(format!("non-finite {} residual", f.kind.name())));
    }
    let w = huber_weight(&f.loss, s).sqrt();
    Ok(Linearized {
        cost: robust_cost(&f.loss, s),
        residual: &rw * w,
        jacobians: js.iter().map(|j| l * j * w).collect(),
    })
}

/// Central-difference Jacobians of the unwhitened residual, one block per
/// key, perturbing each tangent coordinate by `±step`.
pub fn numerical_jacobians(
    f: &Factor,
    values: &Values,
    step: f64,
) -> Result<Vec<DMatrix<f64>>, GraphError> {
    let r0 = raw_residual(f, values)?;
    let mut out = Vec::with_capacity(f.keys.len());
    for key in &f.keys {
        let dim = key.dim();
        let mut j = DMatrix::zeros(r0.len(), dim);
        for c in 0..dim {
            let mut d = vec![0.0; dim];
            d[c] = step;
            let mut plus = values.clone();
            plus.retract(key, &d);
            d[c] = -step;
            let mut minus = values.clone();
            minus.retract(key, &d);
            let col = (raw_residual(f, &plus)? - raw_residual(f, &minus)?) / (2.0 * step);
            j.set_column(c, &col);
        }
        out.push(j);
    }
    Ok(out)
}
