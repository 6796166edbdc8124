//! Geo-referenced map building: fuse GPS, odometry, and gated feature tracks
//! into an optimized landmark database that keeps only valid-class landmarks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, Matrix6, Quaternion, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

use crate::factor_graph::{
    solve, Factor, FactorGraphError, Graph, SolveOptions, SolveReport, VarValue, VariableKey,
};
use crate::geometry::{triangulate, Pose3};
use crate::semantic::{
    decide_condition, GatePolicy, LabelHistogram, SemanticClass, NUM_CLASSES,
};
use crate::sim::ObservationStream;

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("no GPS in stream")]
    NoGps,
    #[error("solver: {0}")]
    Solver(#[from] FactorGraphError),
    #[error("io error: {0}")]
    Io(String),
    #[error("schema version mismatch: {0}")]
    SchemaVersionMismatch(String),
    #[error("database parse: {0}")]
    Parse(String),
}

/// One mapped landmark: optimizer-refined 3D position in the geo-referenced
/// frame plus the semantic evidence and 2D track it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct DbLandmark {
    pub landmark_id: u64,
    pub position: Vector3<f64>,
    pub semantic_class: SemanticClass,
    pub histogram: LabelHistogram,
    /// (keyframe_id, pixel) sightings.
    pub observations: Vec<(u64, Vector2<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkDatabase {
    /// First GPS fix; defines the origin of the geo-referenced frame that
    /// all stored positions and keyframe poses are expressed in.
    pub origin: Vector3<f64>,
    pub keyframes: BTreeMap<u64, Pose3>,
    pub landmarks: BTreeMap<u64, DbLandmark>,
}

impl LandmarkDatabase {
    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct MappingReport {
    /// Distinct landmarks observed in the stream.
    pub landmarks_in: usize,
    /// Landmarks rejected by the semantic gate, keyed by their voted class.
    pub gated_out: BTreeMap<SemanticClass, usize>,
    /// Gate-open landmarks dropped for geometric reasons (too few
    /// observations or ill-conditioned triangulation).
    pub degenerate: usize,
    pub landmarks_kept: usize,
    pub final_cost: f64,
    pub iterations: usize,
    pub solve_report: Option<SolveReport>,
}

impl MappingReport {
    pub fn gated_out_total(&self) -> usize {
        self.gated_out.values().sum()
    }
}

/// Measurement noise floors so zero-noise streams still yield well-scaled,
/// positive-definite covariances.
const PIXEL_STD_FLOOR: f64 = 1.0;
const GPS_STD_FLOOR: f64 = 1e-2;
const ODOM_ROT_STD_FLOOR: f64 = 1e-4;
const ODOM_TRANS_STD_FLOOR: f64 = 1e-3;

pub(crate) fn pixel_covariance(pixel_noise_std: f64) -> Matrix2<f64> {
    let s = pixel_noise_std.max(PIXEL_STD_FLOOR);
    Matrix2::identity() * s * s
}

pub(crate) fn odometry_covariance(odom_noise: (f64, f64), n_sub: usize) -> Matrix6<f64> {
    let rot = odom_noise.0.max(ODOM_ROT_STD_FLOOR);
    let trans = odom_noise.1.max(ODOM_TRANS_STD_FLOOR);
    let n = n_sub as f64;
    let mut cov = Matrix6::zeros();
    for i in 0..3 {
        cov[(i, i)] = n * rot * rot;
        cov[(i + 3, i + 3)] = n * trans * trans;
    }
    cov
}

fn gps_covariance(gps_noise_std: f64) -> Matrix3<f64> {
    let s = gps_noise_std.max(GPS_STD_FLOOR);
    Matrix3::identity() * s * s
}

/// Per-frame odometry: compose the substeps of each inter-frame interval into
/// one relative pose, returning (frame_i, frame_j, relative, substep count).
pub(crate) fn frame_odometry(stream: &ObservationStream) -> Vec<(u64, u64, Pose3, usize)> {
    let frame_times: Vec<f64> = stream.frames.iter().map(|f| f.t).collect();
    let mut out = Vec::new();
    let mut acc = Pose3::identity();
    let mut n_sub = 0usize;
    let mut frame_i = 0usize;
    for s in &stream.odometry {
        acc = acc.compose(&s.relative);
        n_sub += 1;
        if frame_i + 1 < frame_times.len() && (s.t1 - frame_times[frame_i + 1]).abs() < 1e-9 {
            out.push((
                stream.frames[frame_i].frame_id,
                stream.frames[frame_i + 1].frame_id,
                acc,
                n_sub,
            ));
            acc = Pose3::identity();
            n_sub = 0;
            frame_i += 1;
        }
    }
    out
}

/// Dead-reckoned pose per frame, anchored at the first frame's pose.
pub(crate) fn dead_reckon(stream: &ObservationStream) -> BTreeMap<u64, Pose3> {
    let mut poses = BTreeMap::new();
    if stream.frames.is_empty() {
        return poses;
    }
    let mut pose = stream.frames[0].true_pose;
    poses.insert(stream.frames[0].frame_id, pose);
    for (_, j, rel, _) in frame_odometry(stream) {
        pose = pose.compose(&rel);
        poses.insert(j, pose);
    }
    poses
}

/// Accumulate each landmark's label histogram and 2D track over the stream.
pub(crate) fn collect_tracks(
    stream: &ObservationStream,
) -> BTreeMap<u64, (LabelHistogram, Vec<(u64, Vector2<f64>)>)> {
    let mut tracks: BTreeMap<u64, (LabelHistogram, Vec<(u64, Vector2<f64>)>)> = BTreeMap::new();
    for frame in &stream.frames {
        for obs in &frame.observations {
            let entry = tracks.entry(obs.landmark_id).or_default();
            entry.0.accumulate(obs.label);
            entry.1.push((frame.frame_id, obs.pixel));
        }
    }
    tracks
}

/// Build a geo-referenced landmark database from a GPS-aided stream.
///
/// Pipeline: per-landmark histograms -> condition variables under `policy` ->
/// factor graph (odometry between consecutive frames, GPS position factors,
/// gated projection factors with triangulated initials) -> batch solve ->
/// export open-gate, non-degenerate landmarks with optimized positions.
pub fn build_map(
    stream: &ObservationStream,
    policy: &GatePolicy,
) -> Result<(LandmarkDatabase, MappingReport), MappingError> {
    if stream.gps.is_empty() {
        return Err(MappingError::NoGps);
    }
    let mut report = MappingReport::default();

    let initial_poses = dead_reckon(stream);
    let tracks = collect_tracks(stream);
    report.landmarks_in = tracks.len();

    let mut graph = Graph::new();
    for frame in &stream.frames {
        graph.add_variable(
            VariableKey::nav(frame.frame_id),
            VarValue::Pose(initial_poses[&frame.frame_id]),
        );
    }

    // Anchor the gauge: GPS pins position but the global orientation needs a
    // (loose) prior on the first state.
    let anchor_cov = Matrix6::identity() * 1e-4;
    graph.add_factor(Factor::PriorPose {
        key: VariableKey::nav(stream.frames[0].frame_id),
        measured: stream.frames[0].true_pose,
        covariance: anchor_cov,
    });

    for (i, j, rel, n_sub) in frame_odometry(stream) {
        graph.add_factor(Factor::Odometry {
            key_i: VariableKey::nav(i),
            key_j: VariableKey::nav(j),
            measured: rel,
            covariance: odometry_covariance(stream.odom_noise, n_sub),
        });
    }

    let gps_cov = gps_covariance(stream.gps_noise_std);
    for g in &stream.gps {
        let frame = stream
            .frames
            .iter()
            .find(|f| (f.t - g.t).abs() < 1e-9)
            .ok_or_else(|| {
                MappingError::Parse(format!("GPS at t={} matches no camera frame", g.t))
            })?;
        graph.add_factor(Factor::GpsPosition {
            key: VariableKey::nav(frame.frame_id),
            measured: g.position,
            covariance: gps_cov,
        });
    }

    let pix_cov = pixel_covariance(stream.pixel_noise_std);
    let mut kept_candidates: Vec<u64> = Vec::new();
    for (&landmark_id, (hist, obs)) in &tracks {
        let gate = decide_condition(landmark_id, hist, policy);
        if !gate.is_open() {
            let class = hist.mode().expect("observed landmark").0;
            *report.gated_out.entry(class).or_insert(0) += 1;
            continue;
        }
        if obs.len() < 2 {
            report.degenerate += 1;
            continue;
        }
        let rays: Vec<(Pose3, Vector2<f64>)> = obs
            .iter()
            .map(|(kf, px)| (initial_poses[kf], *px))
            .collect();
        let Ok(point) = triangulate(&rays, &stream.intrinsics) else {
            report.degenerate += 1;
            continue;
        };
        graph.add_variable(VariableKey::landmark(landmark_id), VarValue::Point(point));
        for (kf, px) in obs {
            graph.add_gated_factor(
                Factor::Projection {
                    nav_key: VariableKey::nav(*kf),
                    landmark_key: VariableKey::landmark(landmark_id),
                    pixel: *px,
                    covariance: pix_cov,
                    intrinsics: stream.intrinsics,
                },
                landmark_id,
            );
        }
        kept_candidates.push(landmark_id);
    }

    let (values, solve_report) = solve(&graph, &SolveOptions::default())?;
    report.final_cost = solve_report.final_cost;
    report.iterations = solve_report.iterations;
    report.solve_report = Some(solve_report);

    let mut db = LandmarkDatabase {
        origin: stream.gps[0].position,
        ..Default::default()
    };
    for frame in &stream.frames {
        db.keyframes.insert(
            frame.frame_id,
            *values
                .pose(&VariableKey::nav(frame.frame_id))
                .expect("nav state solved"),
        );
    }
    for landmark_id in kept_candidates {
        let (hist, obs) = &tracks[&landmark_id];
        let position = *values
            .point(&VariableKey::landmark(landmark_id))
            .expect("landmark solved");
        let semantic_class = hist.mode().expect("observed landmark").0;
        db.landmarks.insert(
            landmark_id,
            DbLandmark {
                landmark_id,
                position,
                semantic_class,
                histogram: hist.clone(),
                observations: obs.clone(),
            },
        );
    }
    report.landmarks_kept = db.landmarks.len();
    Ok((db, report))
}

const DB_HEADER: &str = "SEMNAV_DB v1";

/// Serialize a database to its versioned line-oriented text form. Floats use
/// shortest-roundtrip formatting, so serialization is lossless.
pub fn db_to_string(db: &LandmarkDatabase) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{DB_HEADER}");
    let classes: Vec<String> = SemanticClass::ALL
        .iter()
        .map(|c| format!("{}:{}", c.code(), c.name()))
        .collect();
    let _ = writeln!(out, "CLASSES {}", classes.join(" "));
    let _ = writeln!(out, "ORIGIN {} {} {}", db.origin[0], db.origin[1], db.origin[2]);
    for (id, pose) in &db.keyframes {
        let q = pose.rotation.quaternion();
        let t = &pose.translation;
        let _ = writeln!(
            out,
            "KEYFRAME {id} {} {} {} {} {} {} {}",
            q.w, q.i, q.j, q.k, t[0], t[1], t[2]
        );
    }
    for lm in db.landmarks.values() {
        let _ = writeln!(
            out,
            "LANDMARK {} {} {} {} {}",
            lm.landmark_id,
            lm.semantic_class.code(),
            lm.position[0],
            lm.position[1],
            lm.position[2]
        );
        let counts: Vec<String> = lm.histogram.counts().iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "HIST {} {}", lm.landmark_id, counts.join(" "));
        for (kf, px) in &lm.observations {
            let _ = writeln!(out, "OBSKF {} {} {} {}", lm.landmark_id, kf, px[0], px[1]);
        }
    }
    out
}

pub fn db_from_str(text: &str) -> Result<LandmarkDatabase, MappingError> {
    let mut lines = text.lines();
    let first = lines
        .next()
        .ok_or_else(|| MappingError::Parse("empty database file".into()))?;
    if first.trim() != DB_HEADER {
        return Err(MappingError::SchemaVersionMismatch(format!(
            "header `{}`, expected `{DB_HEADER}`",
            first.trim()
        )));
    }

    fn num<T: std::str::FromStr>(lineno: usize, s: Option<&str>) -> Result<T, MappingError> {
        let s = s.ok_or_else(|| MappingError::Parse(format!("line {lineno}: missing field")))?;
        s.parse()
            .map_err(|_| MappingError::Parse(format!("line {lineno}: bad number `{s}`")))
    }

    let mut db = LandmarkDatabase::default();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut f = line.split_whitespace();
        match f.next().unwrap() {
            "CLASSES" => {
                for entry in f {
                    let (code, name) = entry.split_once(':').ok_or_else(|| {
                        MappingError::Parse(format!("line {lineno}: bad class entry `{entry}`"))
                    })?;
                    let code: u8 = num(lineno, Some(code))?;
                    match SemanticClass::from_code(code) {
                        Some(c) if c.name() == name => {}
                        _ => {
                            return Err(MappingError::SchemaVersionMismatch(format!(
                                "unknown class {code}:{name}"
                            )))
                        }
                    }
                }
            }
            "ORIGIN" => {
                db.origin =
                    Vector3::new(num(lineno, f.next())?, num(lineno, f.next())?, num(lineno, f.next())?);
            }
            "KEYFRAME" => {
                let id: u64 = num(lineno, f.next())?;
                let q = Quaternion::new(
                    num(lineno, f.next())?,
                    num(lineno, f.next())?,
                    num(lineno, f.next())?,
                    num(lineno, f.next())?,
                );
                let t = Vector3::new(
                    num(lineno, f.next())?,
                    num(lineno, f.next())?,
                    num(lineno, f.next())?,
                );
                db.keyframes
                    .insert(id, Pose3::new(UnitQuaternion::new_unchecked(q), t));
            }
            "LANDMARK" => {
                let id: u64 = num(lineno, f.next())?;
                let code: u8 = num(lineno, f.next())?;
                let class = SemanticClass::from_code(code).ok_or_else(|| {
                    MappingError::SchemaVersionMismatch(format!("unknown class code {code}"))
                })?;
                let position = Vector3::new(
                    num(lineno, f.next())?,
                    num(lineno, f.next())?,
                    num(lineno, f.next())?,
                );
                db.landmarks.insert(
                    id,
                    DbLandmark {
                        landmark_id: id,
                        position,
                        semantic_class: class,
                        histogram: LabelHistogram::new(),
                        observations: Vec::new(),
                    },
                );
            }
            "HIST" => {
                let id: u64 = num(lineno, f.next())?;
                let lm = db.landmarks.get_mut(&id).ok_or_else(|| {
                    MappingError::Parse(format!("line {lineno}: HIST for unknown landmark {id}"))
                })?;
                let mut counts = [0u32; NUM_CLASSES];
                for c in counts.iter_mut() {
                    *c = num(lineno, f.next())?;
                }
                lm.histogram = LabelHistogram::from_counts(counts);
            }
            "OBSKF" => {
                let id: u64 = num(lineno, f.next())?;
                let lm = db.landmarks.get_mut(&id).ok_or_else(|| {
                    MappingError::Parse(format!("line {lineno}: OBSKF for unknown landmark {id}"))
                })?;
                let kf: u64 = num(lineno, f.next())?;
                let px = Vector2::new(num(lineno, f.next())?, num(lineno, f.next())?);
                lm.observations.push((kf, px));
            }
            other => {
                return Err(MappingError::Parse(format!(
                    "line {lineno}: unknown record `{other}`"
                )))
            }
        }
    }
    Ok(db)
}

pub fn save_db(db: &LandmarkDatabase, path: &Path) -> Result<(), MappingError> {
    std::fs::write(path, db_to_string(db)).map_err(|e| MappingError::Io(e.to_string()))
}

pub fn load_db(path: &Path) -> Result<LandmarkDatabase, MappingError> {
    let text = std::fs::read_to_string(path).map_err(|e| MappingError::Io(e.to_string()))?;
    db_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::{default_policy, GateContext};
    use crate::sim::{generate_world, synthesize, ScenarioConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn static_valid_config() -> ScenarioConfig {
        let mut config = crate::sim::test_config();
        config.dynamic_fraction = 0.0;
        config
    }

    #[test]
    fn noiseless_map_recovers_landmark_positions() {
        let config = static_valid_config();
        let world = generate_world(&config).unwrap();
        let stream = synthesize(&config, &world).unwrap();
        let (db, report) = build_map(&stream, &default_policy(GateContext::Mapping)).unwrap();
        assert!(report.landmarks_kept > 20, "kept {}", report.landmarks_kept);
        assert_eq!(
            report.landmarks_in,
            report.landmarks_kept + report.gated_out_total() + report.degenerate
        );
        for lm in db.landmarks.values() {
            let truth = world.landmarks[lm.landmark_id as usize].initial_position;
            let err = (lm.position - truth).norm();
            assert!(err < 1e-6, "landmark {} error {err}", lm.landmark_id);
        }
    }

    #[test]
    fn class_purity_under_clean_labels() {
        let mut config = static_valid_config();
        // Mix that includes rejected classes.
        config.class_mix = [0.0; NUM_CLASSES];
        config.class_mix[SemanticClass::Building as usize] = 0.3;
        config.class_mix[SemanticClass::Pole as usize] = 0.2;
        config.class_mix[SemanticClass::Vehicle as usize] = 0.2;
        config.class_mix[SemanticClass::Road as usize] = 0.2;
        config.class_mix[SemanticClass::Pedestrian as usize] = 0.1;
        let world = generate_world(&config).unwrap();
        let stream = synthesize(&config, &world).unwrap();
        let policy = default_policy(GateContext::Mapping);
        let (db, report) = build_map(&stream, &policy).unwrap();
        for lm in db.landmarks.values() {
            assert!(policy.is_valid(lm.semantic_class));
            assert!(lm.observations.len() >= 2);
            // Clean labels: the stored class is the true class.
            assert_eq!(
                lm.semantic_class,
                world.landmarks[lm.landmark_id as usize].true_class
            );
        }
        // Static rejected-class landmarks are gated out, not kept.
        assert!(report.gated_out_total() > 0);
        for (class, _) in &report.gated_out {
            assert!(!policy.is_valid(*class));
        }
    }

    #[test]
    fn all_vehicle_world_yields_empty_db() {
        let mut config = static_valid_config();
        config.class_mix = [0.0; NUM_CLASSES];
        config.class_mix[SemanticClass::Vehicle as usize] = 1.0;
        let world = generate_world(&config).unwrap();
        let stream = synthesize(&config, &world).unwrap();
        let (db, report) = build_map(&stream, &default_policy(GateContext::Mapping)).unwrap();
        assert!(db.is_empty());
        assert_eq!(
            report.gated_out.get(&SemanticClass::Vehicle).copied(),
            Some(report.landmarks_in)
        );
    }

    #[test]
    fn gated_kept_set_is_subset_of_ungated() {
        let mut config = static_valid_config();
        config.class_mix = [0.0; NUM_CLASSES];
        config.class_mix[SemanticClass::Building as usize] = 0.5;
        config.class_mix[SemanticClass::Vehicle as usize] = 0.5;
        let world = generate_world(&config).unwrap();
        let stream = synthesize(&config, &world).unwrap();
        let (gated, _) = build_map(&stream, &default_policy(GateContext::Mapping)).unwrap();
        let (ungated, _) = build_map(&stream, &GatePolicy::accept_all(GateContext::Mapping)).unwrap();
        for id in gated.landmarks.keys() {
            assert!(ungated.landmarks.contains_key(id));
        }
        assert!(ungated.landmarks.len() > gated.landmarks.len());
    }

    #[test]
    fn gps_free_stream_is_rejected() {
        let config = static_valid_config();
        let world = generate_world(&config).unwrap();
        let mut stream = synthesize(&config, &world).unwrap();
        stream.gps.clear();
        assert!(matches!(
            build_map(&stream, &default_policy(GateContext::Mapping)),
            Err(MappingError::NoGps)
        ));
    }

    pub(crate) fn random_db(rng: &mut ChaCha8Rng) -> LandmarkDatabase {
        let mut db = LandmarkDatabase {
            origin: Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()),
            ..Default::default()
        };
        for id in 0..rng.gen_range(0..8u64) {
            db.keyframes.insert(
                id,
                crate::geometry::Pose3::exp(&crate::geometry::Twist6 {
                    rotational: Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()),
                    translational: Vector3::new(
                        rng.gen::<f64>() * 100.0,
                        rng.gen::<f64>() * 100.0,
                        rng.gen::<f64>(),
                    ),
                }),
            );
        }
        for id in 0..rng.gen_range(0..20u64) {
            let mut counts = [0u32; NUM_CLASSES];
            for c in counts.iter_mut() {
                *c = rng.gen_range(0..10);
            }
            let n_obs = rng.gen_range(0..5);
            db.landmarks.insert(
                id,
                DbLandmark {
                    landmark_id: id,
                    position: Vector3::new(
                        rng.gen::<f64>() * 1e3,
                        -rng.gen::<f64>() * 1e-3,
                        rng.gen::<f64>(),
                    ),
                    semantic_class: SemanticClass::from_code(rng.gen_range(0..12)).unwrap(),
                    histogram: LabelHistogram::from_counts(counts),
                    observations: (0..n_obs)
                        .map(|k| (k, Vector2::new(rng.gen::<f64>() * 640.0, rng.gen::<f64>() * 480.0)))
                        .collect(),
                },
            );
        }
        db
    }

    #[test]
    fn db_roundtrip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let db = random_db(&mut rng);
            let text = db_to_string(&db);
            let back = db_from_str(&text).unwrap();
            assert_eq!(db, back);
            assert_eq!(text, db_to_string(&back));
        }
    }

    #[test]
    fn empty_db_roundtrip() {
        let db = LandmarkDatabase::default();
        assert_eq!(db, db_from_str(&db_to_string(&db)).unwrap());
    }

    #[test]
    fn unknown_class_code_is_schema_mismatch() {
        let text = format!("{DB_HEADER}\nLANDMARK 0 12 1 2 3\n");
        assert!(matches!(
            db_from_str(&text),
            Err(MappingError::SchemaVersionMismatch(_))
        ));
    }

    #[test]
    fn bad_header_is_schema_mismatch() {
        assert!(matches!(
            db_from_str("SEMNAV_DB v2\n"),
            Err(MappingError::SchemaVersionMismatch(_))
        ));
    }

    #[test]
    fn save_load_file_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let db = random_db(&mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.db");
        save_db(&db, &path).unwrap();
        assert_eq!(db, load_db(&path).unwrap());
    }
}
