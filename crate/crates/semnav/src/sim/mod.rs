//! Deterministic generator of worlds, trajectories, and noisy sensor/label
//! streams: the stand-in for the vehicle, camera, odometry, GPS, and the
//! segmentation oracle.
//!
//! Everything is a pure function of a [`ScenarioConfig`]; identical configs
//! produce bit-identical streams.

mod config;
mod io;
mod stream;
mod world;

pub use config::{parse_config, ScenarioConfig};
#[cfg(test)]
pub(crate) use config::test_config;
pub use io::{read_stream, write_stream, STREAM_FILE};
pub use stream::{
    camera_pose_at, synthesize, CameraFrame, GpsSample, Observation, ObservationStream,
    OdometrySample,
};
pub use world::{advance_dynamics, generate_world, Polyline, WorldLandmark, WorldModel};

use thiserror::Error;

/// Height of the camera above the path, meters.
pub const CAMERA_HEIGHT: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("config parse: {0}")]
    ConfigParse(String),
    #[error("invalid class mix: {0}")]
    InvalidClassMix(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("stream parse: {0}")]
    StreamParse(String),
}

/// Standard normal draw (Box-Muller); keeps the crate free of a separate
/// distributions dependency.
pub(crate) fn gaussian(rng: &mut impl rand::Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
