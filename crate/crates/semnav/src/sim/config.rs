//! Scenario configuration and its text-file schema.
//!
//! The file format is line-oriented `key = value`, one value per key, with
//! `#` comments. Lists use `;`-separated pairs (`path`) or `,`-separated
//! `Name:weight` entries (`class_mix`). See the bundled `configs/*.cfg` for
//! complete examples.

use std::collections::BTreeMap;

use nalgebra::Vector2;

use crate::geometry::CameraIntrinsics;
use crate::semantic::{SemanticClass, NUM_CLASSES};

use super::SimError;

/// Full deterministic description of a simulated world, trajectory, sensor
/// noise, and label noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// 2D waypoints of the vehicle path, meters.
    pub path: Vec<Vector2<f64>>,
    /// Constant height of the path, meters.
    pub path_height: f64,
    /// Vehicle speed, m/s.
    pub speed: f64,
    /// Camera frame rate, Hz.
    pub camera_rate: f64,
    /// Odometry step rate, Hz.
    pub odometry_rate: f64,
    /// GPS fix rate, Hz.
    pub gps_rate: f64,
    pub n_landmarks: usize,
    /// Proportions over the 12 classes, indexed by class code; sums to 1.
    pub class_mix: [f64; NUM_CLASSES],
    /// Fraction of dynamic-capable landmarks that actually move.
    pub dynamic_fraction: f64,
    /// Speed of moving landmarks, m/s.
    pub dynamic_speed: f64,
    pub pixel_noise_std: f64,
    /// Per odometry step: (rotational std, rad; translational std, m).
    pub odom_noise: (f64, f64),
    pub gps_noise_std: f64,
    /// Probability that a reported label is wrong (uniform over the other 11).
    pub label_error_rate: f64,
    pub max_view_distance: f64,
    pub intrinsics: CameraIntrinsics,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        fn range(name: &str, v: f64, lo: f64, hi: f64) -> Result<(), SimError> {
            if !(v >= lo && v <= hi) {
                return Err(SimError::ConfigParse(format!(
                    "out of range: {name} = {v}, expected [{lo}, {hi}]"
                )));
            }
            Ok(())
        }
        if self.path.len() < 2 {
            return Err(SimError::ConfigParse(
                "path needs at least 2 waypoints".into(),
            ));
        }
        for (name, v) in [
            ("speed", self.speed),
            ("camera_rate", self.camera_rate),
            ("odometry_rate", self.odometry_rate),
            ("gps_rate", self.gps_rate),
        ] {
            if v <= 0.0 {
                return Err(SimError::ConfigParse(format!(
                    "out of range: {name} = {v}, expected > 0"
                )));
            }
        }
        range("dynamic_fraction", self.dynamic_fraction, 0.0, 1.0)?;
        range("label_error_rate", self.label_error_rate, 0.0, 1.0)?;
        range("pixel_noise_std", self.pixel_noise_std, 0.0, f64::INFINITY)?;
        range("gps_noise_std", self.gps_noise_std, 0.0, f64::INFINITY)?;
        range("odom_noise_rot", self.odom_noise.0, 0.0, f64::INFINITY)?;
        range("odom_noise_trans", self.odom_noise.1, 0.0, f64::INFINITY)?;
        range("dynamic_speed", self.dynamic_speed, 0.0, f64::INFINITY)?;
        if self.max_view_distance <= 0.0 {
            return Err(SimError::ConfigParse(
                "out of range: max_view_distance must be > 0".into(),
            ));
        }
        let sum: f64 = self.class_mix.iter().sum();
        if self.class_mix.iter().any(|&p| p < 0.0) {
            return Err(SimError::InvalidClassMix("negative proportion".into()));
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SimError::InvalidClassMix(format!(
                "proportions sum to {sum}, expected 1"
            )));
        }
        let k = &self.intrinsics;
        if k.fx <= 0.0 || k.fy <= 0.0 {
            return Err(SimError::ConfigParse("out of range: fx/fy must be > 0".into()));
        }
        if k.cx < 0.0 || k.cx >= k.image_width as f64 || k.cy < 0.0 || k.cy >= k.image_height as f64
        {
            return Err(SimError::ConfigParse(
                "out of range: principal point outside image".into(),
            ));
        }
        Ok(())
    }
}

/// Parse a scenario config from its `key = value` text form.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, SimError> {
    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            SimError::ConfigParse(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        kv.insert(key.trim().to_string(), value.trim().to_string());
    }

    fn req<'a>(kv: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str, SimError> {
        kv.get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| SimError::ConfigParse(format!("missing key `{key}`")))
    }
    fn num<T: std::str::FromStr>(key: &str, s: &str) -> Result<T, SimError> {
        s.parse()
            .map_err(|_| SimError::ConfigParse(format!("invalid number for `{key}`: `{s}`")))
    }
    fn req_num<T: std::str::FromStr>(
        kv: &BTreeMap<String, String>,
        key: &str,
    ) -> Result<T, SimError> {
        num(key, req(kv, key)?)
    }

    let path_str = req(&kv, "path")?;
    let mut path = Vec::new();
    for part in path_str.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (x, y) = part
            .split_once(',')
            .ok_or_else(|| SimError::ConfigParse(format!("invalid waypoint `{part}`")))?;
        path.push(Vector2::new(
            num::<f64>("path", x.trim())?,
            num::<f64>("path", y.trim())?,
        ));
    }

    let mix_str = req(&kv, "class_mix")?;
    let mut class_mix = [0.0; NUM_CLASSES];
    for part in mix_str.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (name, weight) = part
            .split_once(':')
            .ok_or_else(|| SimError::ConfigParse(format!("invalid class_mix entry `{part}`")))?;
        let class = SemanticClass::from_name(name.trim()).ok_or_else(|| {
            SimError::InvalidClassMix(format!("unknown class `{}`", name.trim()))
        })?;
        class_mix[class as usize] = num("class_mix", weight.trim())?;
    }

    let config = ScenarioConfig {
        seed: req_num(&kv, "seed")?,
        path,
        path_height: req_num(&kv, "path_height")?,
        speed: req_num(&kv, "speed")?,
        camera_rate: kv
            .get("camera_rate")
            .map(|s| num("camera_rate", s))
            .transpose()?
            .unwrap_or(20.0),
        odometry_rate: kv
            .get("odometry_rate")
            .map(|s| num("odometry_rate", s))
            .transpose()?
            .unwrap_or(100.0),
        gps_rate: req_num(&kv, "gps_rate")?,
        n_landmarks: req_num(&kv, "n_landmarks")?,
        class_mix,
        dynamic_fraction: req_num(&kv, "dynamic_fraction")?,
        dynamic_speed: req_num(&kv, "dynamic_speed")?,
        pixel_noise_std: req_num(&kv, "pixel_noise_std")?,
        odom_noise: (
            req_num(&kv, "odom_noise_rot")?,
            req_num(&kv, "odom_noise_trans")?,
        ),
        gps_noise_std: req_num(&kv, "gps_noise_std")?,
        label_error_rate: req_num(&kv, "label_error_rate")?,
        max_view_distance: req_num(&kv, "max_view_distance")?,
        intrinsics: CameraIntrinsics {
            fx: req_num(&kv, "fx")?,
            fy: req_num(&kv, "fy")?,
            cx: req_num(&kv, "cx")?,
            cy: req_num(&kv, "cy")?,
            image_width: req_num(&kv, "image_width")?,
            image_height: req_num(&kv, "image_height")?,
        },
    };
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
pub(crate) fn test_config() -> ScenarioConfig {
    let mut class_mix = [0.0; NUM_CLASSES];
    class_mix[SemanticClass::Building as usize] = 0.4;
    class_mix[SemanticClass::Tree as usize] = 0.3;
    class_mix[SemanticClass::Pole as usize] = 0.2;
    class_mix[SemanticClass::Vehicle as usize] = 0.1;
    ScenarioConfig {
        seed: 7,
        path: vec![Vector2::new(0.0, 0.0), Vector2::new(80.0, 0.0)],
        path_height: 0.0,
        speed: 8.0,
        camera_rate: 4.0,
        odometry_rate: 20.0,
        gps_rate: 2.0,
        n_landmarks: 60,
        class_mix,
        dynamic_fraction: 0.5,
        dynamic_speed: 2.0,
        pixel_noise_std: 0.0,
        odom_noise: (0.0, 0.0),
        gps_noise_std: 0.0,
        label_error_rate: 0.0,
        max_view_distance: 40.0,
        intrinsics: CameraIntrinsics {
            fx: 450.0,
            fy: 450.0,
            cx: 320.0,
            cy: 240.0,
            image_width: 640,
            image_height: 480,
        },
    }
}
