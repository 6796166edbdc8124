//! Sensor stream synthesis: camera frames with labeled landmark
//! observations, relative odometry, and GPS fixes, all with configurable
//! noise.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{project, CameraIntrinsics, Pose3, Twist6};
use crate::semantic::{SemanticClass, NUM_CLASSES};

use super::config::ScenarioConfig;
use super::world::{Polyline, WorldModel};
use super::{gaussian, SimError, CAMERA_HEIGHT};

/// One labeled landmark detection in a camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub landmark_id: u64,
    pub pixel: Vector2<f64>,
    /// The (possibly wrong) label reported by the segmentation front end.
    pub label: SemanticClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub frame_id: u64,
    pub t: f64,
    /// Ground-truth camera pose, kept for evaluation; estimators must not
    /// read it except to anchor the very first state.
    pub true_pose: Pose3,
    pub observations: Vec<Observation>,
}

/// Noisy relative motion of the camera between two timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct OdometrySample {
    pub t0: f64,
    pub t1: f64,
    pub relative: Pose3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpsSample {
    pub t: f64,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationStream {
    pub intrinsics: CameraIntrinsics,
    pub pixel_noise_std: f64,
    pub odom_noise: (f64, f64),
    pub gps_noise_std: f64,
    pub frames: Vec<CameraFrame>,
    pub odometry: Vec<OdometrySample>,
    pub gps: Vec<GpsSample>,
}

/// Ground-truth camera pose at arc length `s`: camera mounted
/// `CAMERA_HEIGHT` above the path, optical axis along the path tangent,
/// image x to the vehicle's right, image y toward the ground.
pub fn camera_pose_at(path: &Polyline, path_height: f64, s: f64) -> Pose3 {
    let (p, tangent) = path.sample(s);
    let right = Vector3::new(tangent[1], -tangent[0], 0.0);
    let down = Vector3::new(0.0, 0.0, -1.0);
    let forward = Vector3::new(tangent[0], tangent[1], 0.0);
    let m = Matrix3::from_columns(&[right, down, forward]);
    Pose3::new(
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m)),
        Vector3::new(p[0], p[1], path_height + CAMERA_HEIGHT),
    )
}

fn noisy_label(
    rng: &mut impl Rng,
    true_class: SemanticClass,
    error_rate: f64,
) -> SemanticClass {
    if error_rate > 0.0 && rng.gen_bool(error_rate) {
        // Uniform over the 11 other classes.
        let mut code = rng.gen_range(0..NUM_CLASSES as u8 - 1);
        if code >= true_class.code() {
            code += 1;
        }
        SemanticClass::from_code(code).unwrap()
    } else {
        true_class
    }
}

/// Generate the full sensor stream for a world and scenario. Deterministic in
/// the config seed; with all noise parameters zero, every measurement is an
/// exact function of the ground truth.
pub fn synthesize(
    config: &ScenarioConfig,
    world: &WorldModel,
) -> Result<ObservationStream, SimError> {
    config.validate()?;
    // Distinct RNG stream from world generation so measurement noise does not
    // alias with landmark placement.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let total = world.path.total_length();
    let dt_frame = 1.0 / config.camera_rate;
    let n_frames = (total / config.speed * config.camera_rate).floor() as u64 + 1;
    let n_sub = ((config.odometry_rate / config.camera_rate).round() as usize).max(1);

    let mut frames = Vec::with_capacity(n_frames as usize);
    let mut odometry = Vec::new();
    let mut gps = Vec::new();
    let mut next_gps_t = 0.0;

    for frame_id in 0..n_frames {
        let t = frame_id as f64 * dt_frame;
        let true_pose = camera_pose_at(&world.path, world.path_height, config.speed * t);

        // Odometry substeps covering the interval since the previous frame.
        if frame_id > 0 {
            let t_prev = (frame_id - 1) as f64 * dt_frame;
            for k in 0..n_sub {
                let t0 = t_prev + dt_frame * k as f64 / n_sub as f64;
                let t1 = t_prev + dt_frame * (k + 1) as f64 / n_sub as f64;
                let p0 = camera_pose_at(&world.path, world.path_height, config.speed * t0);
                let p1 = camera_pose_at(&world.path, world.path_height, config.speed * t1);
                let mut relative = p0.between(&p1);
                let (rot_std, trans_std) = config.odom_noise;
                if rot_std > 0.0 || trans_std > 0.0 {
                    let noise = Twist6 {
                        rotational: Vector3::new(
                            gaussian(&mut rng),
                            gaussian(&mut rng),
                            gaussian(&mut rng),
                        ) * rot_std,
                        translational: Vector3::new(
                            gaussian(&mut rng),
                            gaussian(&mut rng),
                            gaussian(&mut rng),
                        ) * trans_std,
                    };
                    relative = relative.compose(&Pose3::exp(&noise));
                }
                odometry.push(OdometrySample { t0, t1, relative });
            }
        }

        // GPS fixes ride on frame timestamps so estimators can associate
        // them with a navigation state exactly.
        if t >= next_gps_t - 1e-9 {
            let mut position = true_pose.translation;
            if config.gps_noise_std > 0.0 {
                position += Vector3::new(
                    gaussian(&mut rng),
                    gaussian(&mut rng),
                    gaussian(&mut rng),
                ) * config.gps_noise_std;
            }
            gps.push(GpsSample { t, position });
            while next_gps_t <= t + 1e-9 {
                next_gps_t += 1.0 / config.gps_rate;
            }
        }

        let mut observations = Vec::new();
        for landmark in &world.landmarks {
            let position = landmark.position_at(t);
            if (position - true_pose.translation).norm() > config.max_view_distance {
                continue;
            }
            let Ok(proj) = project(&position, &true_pose, &config.intrinsics) else {
                continue;
            };
            if !proj.inside_image {
                continue;
            }
            let mut pixel = proj.pixel;
            if config.pixel_noise_std > 0.0 {
                pixel += Vector2::new(gaussian(&mut rng), gaussian(&mut rng))
                    * config.pixel_noise_std;
                if !config.intrinsics.contains(&pixel) {
                    continue;
                }
            }
            let label = noisy_label(&mut rng, landmark.true_class, config.label_error_rate);
            observations.push(Observation {
                landmark_id: landmark.id,
                pixel,
                label,
            });
        }

        frames.push(CameraFrame {
            frame_id,
            t,
            true_pose,
            observations,
        });
    }

    Ok(ObservationStream {
        intrinsics: config.intrinsics,
        pixel_noise_std: config.pixel_noise_std,
        odom_noise: config.odom_noise,
        gps_noise_std: config.gps_noise_std,
        frames,
        odometry,
        gps,
    })
}

#[cfg(test)]
mod tests {
    use super::super::config::test_config;
    use super::super::world::generate_world;
    use super::*;
    use crate::semantic::LabelHistogram;
    use approx::assert_relative_eq;

    #[test]
    fn same_seed_is_bit_identical() {
        let mut config = test_config();
        config.pixel_noise_std = 1.0;
        config.odom_noise = (1e-3, 1e-2);
        config.gps_noise_std = 0.1;
        config.label_error_rate = 0.1;
        let world = generate_world(&config).unwrap();
        let a = synthesize(&config, &world).unwrap();
        let b = synthesize(&config, &world).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_odometry_composes_to_ground_truth() {
        let config = test_config();
        let world = generate_world(&config).unwrap();
        let stream = synthesize(&config, &world).unwrap();
        let mut pose = stream.frames[0].true_pose;
        let mut odom = stream.odometry.iter();
        for frame in &stream.frames[1..] {
            while let Some(s) = odom.next() {
                pose = pose.compose(&s.relative);
                if (s.t1 - frame.t).abs() < 1e-9 {
                    break;
                }
            }
            assert_relative_eq!(
                pose.translation,
                frame.true_pose.translation,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn noiseless_pixels_reproject_exactly() {
        let config = test_config();
        let world = generate_world(&config).unwrap();
        let stream = synthesize(&config, &world).unwrap();
        let mut checked = 0;
        for frame in &stream.frames {
            for obs in &frame.observations {
                let p = world.landmarks[obs.landmark_id as usize].position_at(frame.t);
                let proj = project(&p, &frame.true_pose, &config.intrinsics).unwrap();
                assert_eq!(proj.pixel, obs.pixel);
                checked += 1;
            }
        }
        assert!(checked > 100, "too few observations: {checked}");
    }

    #[test]
    fn noiseless_gps_matches_camera_position() {
        let config = test_config();
        let world = generate_world(&config).unwrap();
        let stream = synthesize(&config, &world).unwrap();
        assert!(!stream.gps.is_empty());
        for g in &stream.gps {
            let frame = stream
                .frames
                .iter()
                .find(|f| (f.t - g.t).abs() < 1e-12)
                .expect("gps timestamp must coincide with a frame");
            assert_eq!(g.position, frame.true_pose.translation);
        }
    }

    #[test]
    fn observations_respect_view_distance() {
        let config = test_config();
        let world = generate_world(&config).unwrap();
        let stream = synthesize(&config, &world).unwrap();
        for frame in &stream.frames {
            for obs in &frame.observations {
                let p = world.landmarks[obs.landmark_id as usize].position_at(frame.t);
                assert!((p - frame.true_pose.translation).norm() <= config.max_view_distance);
                assert!(config.intrinsics.contains(&obs.pixel));
            }
        }
    }

    /// With a 5% label error rate and a handful of sightings per landmark,
    /// mode voting over each landmark's label histogram should recover the
    /// true class almost always.
    #[test]
    fn mode_voting_recovers_true_class_under_label_noise() {
        let mut config = test_config();
        config.label_error_rate = 0.05;
        config.n_landmarks = 400;
        config.dynamic_fraction = 0.0;
        let world = generate_world(&config).unwrap();
        let stream = synthesize(&config, &world).unwrap();

        let mut histograms = vec![LabelHistogram::new(); config.n_landmarks];
        for frame in &stream.frames {
            for obs in &frame.observations {
                histograms[obs.landmark_id as usize].accumulate(obs.label);
            }
        }

        let mut decided = 0;
        let mut correct = 0;
        for (id, hist) in histograms.iter().enumerate() {
            if hist.total() < 5 {
                continue;
            }
            let (mode, is_tie) = hist.mode().unwrap();
            if !is_tie {
                decided += 1;
                if mode == world.landmarks[id].true_class {
                    correct += 1;
                }
            }
        }
        assert!(decided > 100, "too few decided landmarks: {decided}");
        let accuracy = correct as f64 / decided as f64;
        assert!(accuracy >= 0.99, "mode-vote accuracy {accuracy}");
    }
}
