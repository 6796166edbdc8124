//! Text serialization of observation streams.
//!
//! Line-oriented, one record per line:
//!
//! ```text
//! SEMNAV_STREAM v1
//! INTRINSICS fx fy cx cy width height
//! NOISE pixel_std odom_rot_std odom_trans_std gps_std
//! FRAME id t qw qx qy qz x y z
//! OBS landmark_id u v class_code        (belongs to the preceding FRAME)
//! ODOM t0 t1 qw qx qy qz x y z
//! GPS t x y z
//! ```
//!
//! Floats are written with Rust's shortest-roundtrip formatting, so a
//! write/read cycle reproduces every value bit-exactly.

use std::fmt::Write as _;

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};

use crate::geometry::{CameraIntrinsics, Pose3};
use crate::semantic::SemanticClass;

use super::stream::{CameraFrame, GpsSample, Observation, ObservationStream, OdometrySample};
use super::SimError;

/// Conventional file name for a serialized stream inside a run directory.
pub const STREAM_FILE: &str = "stream.txt";

const HEADER: &str = "SEMNAV_STREAM v1";

fn push_pose(out: &mut String, pose: &Pose3) {
    let q = pose.rotation.quaternion();
    let t = &pose.translation;
    let _ = write!(out, " {} {} {} {} {} {} {}", q.w, q.i, q.j, q.k, t[0], t[1], t[2]);
}

pub fn write_stream(stream: &ObservationStream) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let k = &stream.intrinsics;
    let _ = writeln!(
        out,
        "INTRINSICS {} {} {} {} {} {}",
        k.fx, k.fy, k.cx, k.cy, k.image_width, k.image_height
    );
    let _ = writeln!(
        out,
        "NOISE {} {} {} {}",
        stream.pixel_noise_std, stream.odom_noise.0, stream.odom_noise.1, stream.gps_noise_std
    );
    for frame in &stream.frames {
        let mut line = format!("FRAME {} {}", frame.frame_id, frame.t);
        push_pose(&mut line, &frame.true_pose);
        let _ = writeln!(out, "{line}");
        for obs in &frame.observations {
            let _ = writeln!(
                out,
                "OBS {} {} {} {}",
                obs.landmark_id,
                obs.pixel[0],
                obs.pixel[1],
                obs.label.code()
            );
        }
    }
    for odom in &stream.odometry {
        let mut line = format!("ODOM {} {}", odom.t0, odom.t1);
        push_pose(&mut line, &odom.relative);
        let _ = writeln!(out, "{line}");
    }
    for g in &stream.gps {
        let _ = writeln!(out, "GPS {} {} {} {}", g.t, g.position[0], g.position[1], g.position[2]);
    }
    out
}

struct Fields<'a> {
    lineno: usize,
    parts: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn next_str(&mut self) -> Result<&'a str, SimError> {
        self.parts
            .next()
            .ok_or_else(|| SimError::StreamParse(format!("line {}: missing field", self.lineno)))
    }

    fn num<T: std::str::FromStr>(&mut self) -> Result<T, SimError> {
        let s = self.next_str()?;
        s.parse().map_err(|_| {
            SimError::StreamParse(format!("line {}: bad number `{s}`", self.lineno))
        })
    }

    fn pose(&mut self) -> Result<Pose3, SimError> {
        let (w, i, j, k) = (self.num()?, self.num()?, self.num()?, self.num()?);
        let t = Vector3::new(self.num()?, self.num()?, self.num()?);
        // Quaternions are written already normalized; re-normalizing here
        // would perturb the roundtrip.
        let q = UnitQuaternion::new_unchecked(Quaternion::new(w, i, j, k));
        Ok(Pose3::new(q, t))
    }

    fn finish(mut self) -> Result<(), SimError> {
        if self.parts.next().is_some() {
            return Err(SimError::StreamParse(format!(
                "line {}: trailing fields",
                self.lineno
            )));
        }
        Ok(())
    }
}

pub fn read_stream(text: &str) -> Result<ObservationStream, SimError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| SimError::StreamParse("empty stream".into()))?;
    if first.trim() != HEADER {
        return Err(SimError::StreamParse(format!(
            "bad header `{}`, expected `{HEADER}`",
            first.trim()
        )));
    }

    let mut intrinsics: Option<CameraIntrinsics> = None;
    let mut noise: Option<(f64, f64, f64, f64)> = None;
    let mut frames: Vec<CameraFrame> = Vec::new();
    let mut odometry = Vec::new();
    let mut gps = Vec::new();

    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut f = Fields {
            lineno,
            parts: line.split_whitespace(),
        };
        let tag = f.next_str()?;
        match tag {
            "INTRINSICS" => {
                intrinsics = Some(CameraIntrinsics {
                    fx: f.num()?,
                    fy: f.num()?,
                    cx: f.num()?,
                    cy: f.num()?,
                    image_width: f.num()?,
                    image_height: f.num()?,
                });
                f.finish()?;
            }
            "NOISE" => {
                noise = Some((f.num()?, f.num()?, f.num()?, f.num()?));
                f.finish()?;
            }
            "FRAME" => {
                let frame_id = f.num()?;
                let t = f.num()?;
                let true_pose = f.pose()?;
                f.finish()?;
                frames.push(CameraFrame {
                    frame_id,
                    t,
                    true_pose,
                    observations: Vec::new(),
                });
            }
            "OBS" => {
                let frame = frames.last_mut().ok_or_else(|| {
                    SimError::StreamParse(format!("line {lineno}: OBS before any FRAME"))
                })?;
                let landmark_id = f.num()?;
                let pixel = Vector2::new(f.num()?, f.num()?);
                let code: u8 = f.num()?;
                let label = SemanticClass::from_code(code).ok_or_else(|| {
                    SimError::StreamParse(format!("line {lineno}: unknown class code {code}"))
                })?;
                f.finish()?;
                frame.observations.push(Observation {
                    landmark_id,
                    pixel,
                    label,
                });
            }
            "ODOM" => {
                let t0 = f.num()?;
                let t1 = f.num()?;
                let relative = f.pose()?;
                f.finish()?;
                odometry.push(OdometrySample { t0, t1, relative });
            }
            "GPS" => {
                let t = f.num()?;
                let position = Vector3::new(f.num()?, f.num()?, f.num()?);
                f.finish()?;
                gps.push(GpsSample { t, position });
            }
            other => {
                return Err(SimError::StreamParse(format!(
                    "line {lineno}: unknown record `{other}`"
                )));
            }
        }
    }

    let intrinsics =
        intrinsics.ok_or_else(|| SimError::StreamParse("missing INTRINSICS record".into()))?;
    let (pixel_noise_std, odom_rot, odom_trans, gps_noise_std) =
        noise.ok_or_else(|| SimError::StreamParse("missing NOISE record".into()))?;
    Ok(ObservationStream {
        intrinsics,
        pixel_noise_std,
        odom_noise: (odom_rot, odom_trans),
        gps_noise_std,
        frames,
        odometry,
        gps,
    })
}
