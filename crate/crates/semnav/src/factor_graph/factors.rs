//! Factor definitions and their whitened residuals and analytic Jacobians.
//!
//! Jacobians are taken with respect to a right-multiplicative twist
//! perturbation `p * exp(xi)` for poses (twist ordering `[rot; trans]`) and a
//! plain additive perturbation for landmark positions. Residuals and
//! Jacobians are whitened by the inverse Cholesky factor of the measurement
//! covariance, so squared residual norms are Mahalanobis distances.

use std::collections::BTreeMap;

use nalgebra::{
    DMatrix, DVector, Matrix2, Matrix2x3, Matrix3, Matrix6, Vector2, Vector3,
};

use crate::geometry::{
    CameraIntrinsics, GeometryError, Pose3, se3_adjoint, se3_right_jacobian_inv, so3_hat,
};

use super::FactorGraphError;

/// Which state a variable key refers to. `Landmark` sorts before `NavState`
/// so that landmark blocks are eliminated first in the sparse factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    Landmark,
    NavState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VariableKey {
    pub kind: VarKind,
    pub index: u64,
}

impl VariableKey {
    pub fn nav(index: u64) -> Self {
        VariableKey {
            kind: VarKind::NavState,
            index,
        }
    }

    pub fn landmark(index: u64) -> Self {
        VariableKey {
            kind: VarKind::Landmark,
            index,
        }
    }

    pub fn local_dim(&self) -> usize {
        match self.kind {
            VarKind::NavState => 6,
            VarKind::Landmark => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarValue {
    Pose(Pose3),
    Point(Vector3<f64>),
}

/// Assignment of values to variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Values {
    map: BTreeMap<VariableKey, VarValue>,
}

impl Values {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: VariableKey, value: VarValue) {
        self.map.insert(key, value);
    }

    pub fn get(&self, key: &VariableKey) -> Option<&VarValue> {
        self.map.get(key)
    }

    pub fn pose(&self, key: &VariableKey) -> Result<&Pose3, FactorGraphError> {
        match self.map.get(key) {
            Some(VarValue::Pose(p)) => Ok(p),
            Some(_) => Err(FactorGraphError::VariableKindMismatch(*key)),
            None => Err(FactorGraphError::UnknownVariable(*key)),
        }
    }

    pub fn point(&self, key: &VariableKey) -> Result<&Vector3<f64>, FactorGraphError> {
        match self.map.get(key) {
            Some(VarValue::Point(p)) => Ok(p),
            Some(_) => Err(FactorGraphError::VariableKindMismatch(*key)),
            None => Err(FactorGraphError::UnknownVariable(*key)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VariableKey, &VarValue)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Apply a local update to one variable: pose retraction or point addition.
    pub fn apply_step(&mut self, key: &VariableKey, delta: &DVector<f64>) {
        match self.map.get_mut(key) {
            Some(VarValue::Pose(p)) => {
                let xi = crate::geometry::Twist6 {
                    rotational: Vector3::new(delta[0], delta[1], delta[2]),
                    translational: Vector3::new(delta[3], delta[4], delta[5]),
                };
                *p = p.retract(&xi);
            }
            Some(VarValue::Point(x)) => {
                *x += Vector3::new(delta[0], delta[1], delta[2]);
            }
            None => {}
        }
    }
}

/// Measurement factors. Covariances must be symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    PriorPose {
        key: VariableKey,
        measured: Pose3,
        covariance: Matrix6<f64>,
    },
    Odometry {
        key_i: VariableKey,
        key_j: VariableKey,
        measured: Pose3,
        covariance: Matrix6<f64>,
    },
    GpsPosition {
        key: VariableKey,
        measured: Vector3<f64>,
        covariance: Matrix3<f64>,
    },
    Projection {
        nav_key: VariableKey,
        landmark_key: VariableKey,
        pixel: Vector2<f64>,
        covariance: Matrix2<f64>,
        intrinsics: CameraIntrinsics,
    },
    /// Observation of a fixed pre-mapped 3D point: an individual absolute 2D
    /// measurement on a single navigation state.
    MappedLandmark {
        nav_key: VariableKey,
        point: Vector3<f64>,
        pixel: Vector2<f64>,
        covariance: Matrix2<f64>,
        intrinsics: CameraIntrinsics,
    },
}

impl Factor {
    pub fn keys(&self) -> Vec<VariableKey> {
        match self {
            Factor::PriorPose { key, .. } | Factor::GpsPosition { key, .. } => vec![*key],
            Factor::Odometry { key_i, key_j, .. } => vec![*key_i, *key_j],
            Factor::Projection {
                nav_key,
                landmark_key,
                ..
            } => vec![*nav_key, *landmark_key],
            Factor::MappedLandmark { nav_key, .. } => vec![*nav_key],
        }
    }

    pub fn residual_dim(&self) -> usize {
        match self {
            Factor::PriorPose { .. } | Factor::Odometry { .. } => 6,
            Factor::GpsPosition { .. } => 3,
            Factor::Projection { .. } | Factor::MappedLandmark { .. } => 2,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Factor::PriorPose { .. } => "PriorPose",
            Factor::Odometry { .. } => "Odometry",
            Factor::GpsPosition { .. } => "GpsPosition",
            Factor::Projection { .. } => "Projection",
            Factor::MappedLandmark { .. } => "MappedLandmark",
        }
    }
}

/// Whitened residual and Jacobians of one factor at given values.
#[derive(Debug, Clone)]
pub struct FactorLinearization {
    pub residual: DVector<f64>,
    pub jacobians: Vec<(VariableKey, DMatrix<f64>)>,
}

impl FactorLinearization {
    pub fn squared_norm(&self) -> f64 {
        self.residual.norm_squared()
    }
}

/// Whitener `W = L^-1` for covariance `Sigma = L L^T`, applied on the left.
struct Whitener<const D: usize> {
    l: nalgebra::SMatrix<f64, D, D>,
}

impl<const D: usize> Whitener<D> {
    fn new(cov: &nalgebra::SMatrix<f64, D, D>) -> Result<Self, FactorGraphError> {
        let chol = cov
            .clone()
            .cholesky()
            .ok_or(FactorGraphError::InvalidCovariance)?;
        Ok(Whitener { l: chol.l() })
    }

    fn vec(&self, r: &nalgebra::SVector<f64, D>) -> nalgebra::SVector<f64, D> {
        self.l.solve_lower_triangular(r).expect("nonsingular L")
    }

    fn mat<const C: usize>(
        &self,
        m: &nalgebra::SMatrix<f64, D, C>,
    ) -> nalgebra::SMatrix<f64, D, C> {
        self.l.solve_lower_triangular(m).expect("nonsingular L")
    }
}

fn dynamic<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_iterator(R, C, m.iter().copied())
}

fn dynamic_vec<const R: usize>(v: &nalgebra::SVector<f64, R>) -> DVector<f64> {
    DVector::from_iterator(R, v.iter().copied())
}

/// Whitened residual of a factor plus Jacobians w.r.t. each involved variable.
pub fn residual(f: &Factor, values: &Values) -> Result<FactorLinearization, FactorGraphError> {
    match f {
        Factor::PriorPose {
            key,
            measured,
            covariance,
        } => {
            let p = values.pose(key)?;
            let err = measured.between(p);
            let r = err.log().map_err(geometry_to_factor_err)?;
            let jac = se3_right_jacobian_inv(&r);
            let w = Whitener::new(covariance)?;
            Ok(FactorLinearization {
                residual: dynamic_vec(&w.vec(&r.to_vector())),
                jacobians: vec![(*key, dynamic(&w.mat(&jac)))],
            })
        }
        Factor::Odometry {
            key_i,
            key_j,
            measured,
            covariance,
        } => {
            let pi = values.pose(key_i)?;
            let pj = values.pose(key_j)?;
            let err = measured.between(&pi.between(pj));
            let r = err.log().map_err(geometry_to_factor_err)?;
            let jr_inv = se3_right_jacobian_inv(&r);
            let jac_j = jr_inv;
            let jac_i = -jr_inv * se3_adjoint(&pj.between(pi));
            let w = Whitener::new(covariance)?;
            Ok(FactorLinearization {
                residual: dynamic_vec(&w.vec(&r.to_vector())),
                jacobians: vec![
                    (*key_i, dynamic(&w.mat(&jac_i))),
                    (*key_j, dynamic(&w.mat(&jac_j))),
                ],
            })
        }
        Factor::GpsPosition {
            key,
            measured,
            covariance,
        } => {
            let p = values.pose(key)?;
            let r = p.translation - measured;
            // t' = t + R v under right perturbation; rotation part does not move t.
            let mut jac = nalgebra::SMatrix::<f64, 3, 6>::zeros();
            jac.fixed_view_mut::<3, 3>(0, 3)
                .copy_from(p.rotation.to_rotation_matrix().matrix());
            let w = Whitener::new(covariance)?;
            Ok(FactorLinearization {
                residual: dynamic_vec(&w.vec(&r)),
                jacobians: vec![(*key, dynamic(&w.mat(&jac)))],
            })
        }
        Factor::Projection {
            nav_key,
            landmark_key,
            pixel,
            covariance,
            intrinsics,
        } => {
            let pose = values.pose(nav_key)?;
            let point = values.point(landmark_key)?;
            let (r, du_dpc, p_cam) = projection_parts(pose, point, pixel, intrinsics)?;
            let rot_inv = pose.rotation.inverse().to_rotation_matrix();
            let mut jac_pose = nalgebra::SMatrix::<f64, 2, 6>::zeros();
            jac_pose
                .fixed_view_mut::<2, 3>(0, 0)
                .copy_from(&(du_dpc * so3_hat(&p_cam)));
            jac_pose
                .fixed_view_mut::<2, 3>(0, 3)
                .copy_from(&(-du_dpc));
            let jac_point = du_dpc * rot_inv.matrix();
            let w = Whitener::new(covariance)?;
            Ok(FactorLinearization {
                residual: dynamic_vec(&w.vec(&r)),
                jacobians: vec![
                    (*nav_key, dynamic(&w.mat(&jac_pose))),
                    (*landmark_key, dynamic(&w.mat(&jac_point))),
                ],
            })
        }
        Factor::MappedLandmark {
            nav_key,
            point,
            pixel,
            covariance,
            intrinsics,
        } => {
            let pose = values.pose(nav_key)?;
            let (r, du_dpc, p_cam) = projection_parts(pose, point, pixel, intrinsics)?;
            let mut jac_pose = nalgebra::SMatrix::<f64, 2, 6>::zeros();
            jac_pose
                .fixed_view_mut::<2, 3>(0, 0)
                .copy_from(&(du_dpc * so3_hat(&p_cam)));
            jac_pose
                .fixed_view_mut::<2, 3>(0, 3)
                .copy_from(&(-du_dpc));
            let w = Whitener::new(covariance)?;
            Ok(FactorLinearization {
                residual: dynamic_vec(&w.vec(&r)),
                jacobians: vec![(*nav_key, dynamic(&w.mat(&jac_pose)))],
            })
        }
    }
}

fn geometry_to_factor_err(e: GeometryError) -> FactorGraphError {
    match e {
        GeometryError::BehindCamera(z) => FactorGraphError::BehindCamera(z),
        // A pose residual at the parameterization singularity cannot be
        // linearized; surface it as an invalid (unusable) linearization.
        GeometryError::ParameterizationSingularity(_) => FactorGraphError::InvalidCovariance,
        GeometryError::DegenerateGeometry(_) => FactorGraphError::InvalidCovariance,
    }
}

/// Unwhitened pixel residual, pixel-vs-camera-point Jacobian, and the
/// camera-frame point for a reprojection-style factor.
fn projection_parts(
    pose: &Pose3,
    point: &Vector3<f64>,
    pixel: &Vector2<f64>,
    k: &CameraIntrinsics,
) -> Result<(Vector2<f64>, Matrix2x3<f64>, Vector3<f64>), FactorGraphError> {
    let p_cam = pose.inverse().transform_point(point);
    let z = p_cam[2];
    if z <= crate::geometry::MIN_DEPTH {
        return Err(FactorGraphError::BehindCamera(z));
    }
    let predicted = Vector2::new(k.fx * p_cam[0] / z + k.cx, k.fy * p_cam[1] / z + k.cy);
    let du_dpc = Matrix2x3::new(
        k.fx / z,
        0.0,
        -k.fx * p_cam[0] / (z * z),
        0.0,
        k.fy / z,
        -k.fy * p_cam[1] / (z * z),
    );
    Ok((predicted - pixel, du_dpc, p_cam))
}
