//! Multi-view point triangulation: linear midpoint solution refined by a few
//! Gauss-Newton steps on reprojection error.

use nalgebra::{Matrix3, Vector2, Vector3};

use super::camera::{CameraIntrinsics, MIN_DEPTH};
use super::se3::Pose3;
use super::GeometryError;

/// Rays whose linear system conditioning exceeds this are rejected.
const MAX_CONDITION: f64 = 1e8;
const MAX_REFINE_STEPS: usize = 10;

/// Triangulate a 3D point from pixel observations in two or more cameras.
pub fn triangulate(
    observations: &[(Pose3, Vector2<f64>)],
    k: &CameraIntrinsics,
) -> Result<Vector3<f64>, GeometryError> {
    if observations.len() < 2 {
        return Err(GeometryError::DegenerateGeometry(format!(
            "{} observation(s), need at least 2",
            observations.len()
        )));
    }

    // Midpoint method: minimize the summed squared distance to all rays.
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (pose, pixel) in observations {
        let dir_cam = Vector3::new((pixel[0] - k.cx) / k.fx, (pixel[1] - k.cy) / k.fy, 1.0);
        let dir = (pose.rotation * dir_cam).normalize();
        let origin = pose.translation;
        let proj = Matrix3::identity() - dir * dir.transpose();
        a += proj;
        b += proj * origin;
    }

    let eigen = a.symmetric_eigenvalues();
    let max_eig = eigen.max();
    let min_eig = eigen.min();
    if min_eig <= 0.0 || max_eig / min_eig > MAX_CONDITION {
        return Err(GeometryError::DegenerateGeometry(
            "parallel or near-parallel rays".to_string(),
        ));
    }
    let mut point = a
        .lu()
        .solve(&b)
        .ok_or_else(|| GeometryError::DegenerateGeometry("singular linear system".to_string()))?;

    // Gauss-Newton refinement on reprojection error.
    for _ in 0..MAX_REFINE_STEPS {
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        let mut n_used = 0;
        for (pose, pixel) in observations {
            let rot_inv = pose.rotation.inverse();
            let p_cam = rot_inv * (point - pose.translation);
            if p_cam[2] <= MIN_DEPTH {
                continue;
            }
            let z = p_cam[2];
            let u = Vector2::new(k.fx * p_cam[0] / z + k.cx, k.fy * p_cam[1] / z + k.cy);
            let r = u - pixel;
            let du_dpc = nalgebra::Matrix2x3::new(
                k.fx / z,
                0.0,
                -k.fx * p_cam[0] / (z * z),
                0.0,
                k.fy / z,
                -k.fy * p_cam[1] / (z * z),
            );
            let j = du_dpc * rot_inv.to_rotation_matrix().matrix();
            h += j.transpose() * j;
            g += j.transpose() * r;
            n_used += 1;
        }
        if n_used < 2 {
            break;
        }
        match h.cholesky() {
            Some(chol) => {
                let step = chol.solve(&(-g));
                point += step;
                if step.norm() < 1e-12 {
                    break;
                }
            }
            None => break,
        }
    }

    // Re-validate at the refined point: inconsistent tracks (e.g. a target
    // that moved between observations) can drive the refinement towards
    // infinity or behind the cameras, where the solution is rank-deficient
    // even though the initial rays looked well conditioned.
    let mut a = Matrix3::zeros();
    let mut in_front = 0;
    for (pose, _) in observations {
        let p_cam = pose.rotation.inverse() * (point - pose.translation);
        if p_cam[2] <= MIN_DEPTH {
            continue;
        }
        in_front += 1;
        let dir = (point - pose.translation).normalize();
        a += Matrix3::identity() - dir * dir.transpose();
    }
    if in_front < 2 {
        return Err(GeometryError::DegenerateGeometry(
            "refined point behind cameras".to_string(),
        ));
    }
    let eigen = a.symmetric_eigenvalues();
    if eigen.min() <= 0.0 || eigen.max() / eigen.min() > MAX_CONDITION {
        return Err(GeometryError::DegenerateGeometry(
            "no parallax at refined point".to_string(),
        ));
    }

    Ok(point)
}
