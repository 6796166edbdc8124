//! Pinhole camera model.
//!
//! Camera frame convention: z forward along the optical axis, x right,
//! y down. A [`Pose3`] used as a camera pose maps camera-frame coordinates
//! to world coordinates.

use nalgebra::{Vector2, Vector3};

use super::se3::Pose3;
use super::GeometryError;

/// Minimum camera-frame depth for a projectable point. Set to a physical
/// near-plane rather than an epsilon so projection Jacobians stay bounded:
/// points closer than this are treated as not visible.
pub const MIN_DEPTH: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl CameraIntrinsics {
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel[0] >= 0.0
            && pixel[0] < self.image_width as f64
            && pixel[1] >= 0.0
            && pixel[1] < self.image_height as f64
    }
}

/// Result of projecting a world point into a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelProjection {
    pub pixel: Vector2<f64>,
    /// False when the pixel falls outside the image bounds (flagged, not fatal).
    pub inside_image: bool,
    /// Camera-frame depth of the point.
    pub depth: f64,
}

/// Pinhole projection `u = fx*x/z + cx, v = fy*y/z + cy` of a world point
/// seen from `camera_pose`.
pub fn project(
    world_point: &Vector3<f64>,
    camera_pose: &Pose3,
    k: &CameraIntrinsics,
) -> Result<PixelProjection, GeometryError> {
    let p_cam = camera_pose.inverse().transform_point(world_point);
    if p_cam[2] <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera(p_cam[2]));
    }
    let pixel = Vector2::new(
        k.fx * p_cam[0] / p_cam[2] + k.cx,
        k.fy * p_cam[1] / p_cam[2] + k.cy,
    );
    Ok(PixelProjection {
        pixel,
        inside_image: k.contains(&pixel),
        depth: p_cam[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_k() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            image_width: 640,
            image_height: 480,
        }
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let p = project(&Vector3::new(0.0, 0.0, 1.0), &Pose3::identity(), &unit_k()).unwrap();
        assert_relative_eq!(p.pixel, Vector2::new(0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn pinhole_formula_hand_check() {
        let k = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 320.0,
            cy: 240.0,
            image_width: 640,
            image_height: 480,
        };
        let p = project(&Vector3::new(1.0, 0.0, 2.0), &Pose3::identity(), &k).unwrap();
        assert_relative_eq!(p.pixel, Vector2::new(370.0, 240.0), epsilon = 1e-12);
        assert!(p.inside_image);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let err = project(&Vector3::new(0.0, 0.0, -1.0), &Pose3::identity(), &unit_k());
        assert!(matches!(err, Err(GeometryError::BehindCamera(_))));
    }

    #[test]
    fn outside_image_is_flagged_not_fatal() {
        let k = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 320.0,
            cy: 240.0,
            image_width: 640,
            image_height: 480,
        };
        let p = project(&Vector3::new(10.0, 0.0, 1.0), &Pose3::identity(), &k).unwrap();
        assert!(!p.inside_image);
    }
}
