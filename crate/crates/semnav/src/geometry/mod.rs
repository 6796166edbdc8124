//! SE(3) pose algebra, pinhole camera model, and triangulation primitives.

mod camera;
mod se3;
mod triangulate;

pub use camera::{CameraIntrinsics, MIN_DEPTH, PixelProjection, project};
pub use se3::{Pose3, Twist6, se3_adjoint, se3_right_jacobian_inv, so3_hat, so3_right_jacobian_inv};
pub use triangulate::triangulate;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    /// `log` of a rotation with angle at or beyond pi.
    #[error("parameterization singularity: rotation angle {0} too close to pi")]
    ParameterizationSingularity(f64),
    /// Point has non-positive depth in the camera frame.
    #[error("behind camera: camera-frame z = {0}")]
    BehindCamera(f64),
    /// Triangulation with parallel rays or too few observations.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
}
