//! GPS-denied navigation against a pre-built landmark database: odometry,
//! gated live feature tracks, and gated observations of mapped landmarks are
//! fused in one batch solve. Also per-frame camera resection from 2D-3D
//! matches.

use std::collections::BTreeMap;

use nalgebra::{Matrix6, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::factor_graph::{
    solve, Factor, FactorGraphError, Graph, SolveOptions, SolveReport, VarValue, VariableKey,
};
use crate::geometry::{project, triangulate, CameraIntrinsics, Pose3};
use crate::mapping::{
    collect_tracks, dead_reckon, frame_odometry, odometry_covariance, pixel_covariance,
    LandmarkDatabase,
};
use crate::semantic::{decide_condition, GateContext, GatePolicy, SemanticClass};
use crate::sim::ObservationStream;

#[derive(Debug, Error)]
pub enum LocalizationError {
    #[error("insufficient matches: {0} < 4")]
    InsufficientMatches(usize),
    #[error("solver: {0}")]
    Solver(#[from] FactorGraphError),
    #[error("empty stream")]
    EmptyStream,
}

/// Synthetic stand-in for a landmark matching module: which visible mapped
/// landmarks get matched, and how often a match points at the wrong database
/// entry.
#[derive(Debug, Clone, PartialEq)]
pub struct MatcherConfig {
    /// Probability that a track of a mapped landmark is matched at all.
    pub match_recall: f64,
    /// Probability that a match is assigned a wrong database landmark.
    pub false_match_rate: f64,
    /// Optional per-class multipliers on `match_recall`.
    pub dropout_by_class: BTreeMap<SemanticClass, f64>,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            match_recall: 1.0,
            false_match_rate: 0.0,
            dropout_by_class: BTreeMap::new(),
        }
    }
}

/// Knobs of the localization run beyond the gate policy itself.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizeConfig {
    pub matcher: MatcherConfig,
    /// Seed of the matcher's randomness (recall draws, false-match targets).
    pub seed: u64,
    /// Gate mapped-landmark factors by the CURRENT run's reported labels
    /// (condition variables generated online).
    pub live_label_gating: bool,
    /// Additionally reject matches whose stored database class is invalid
    /// under the policy.
    pub reject_invalid_db_class: bool,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            matcher: MatcherConfig::default(),
            seed: 0,
            live_label_gating: true,
            reject_invalid_db_class: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FrameMatchCounts {
    pub frame_id: u64,
    /// Observations matched to a database landmark.
    pub matched: usize,
    /// Matched observations whose gate is open.
    pub gated: usize,
}

#[derive(Debug, Clone)]
pub struct LocalizationResult {
    /// (timestamp, pose) per camera frame of the input stream, in order.
    pub trajectory: Vec<(f64, Pose3)>,
    pub match_counts: Vec<FrameMatchCounts>,
    pub report: SolveReport,
}

/// Live-track gate policy implied by a mapped-landmark policy: same class
/// set plus Road (drivable surface is fine to track against, just not to
/// map), same evidence floor.
fn tracking_policy_from(policy: &GatePolicy) -> GatePolicy {
    let mut classes = policy.valid_classes();
    if !classes.contains(&SemanticClass::Road) {
        classes.push(SemanticClass::Road);
    }
    GatePolicy::new(GateContext::Tracking, &classes, policy.min_observations)
}

/// Estimate the full trajectory of a GPS-denied stream against a landmark
/// database. Frames with no usable matches are still estimated through the
/// odometry chain.
pub fn localize(
    stream: &ObservationStream,
    db: &LandmarkDatabase,
    policy: &GatePolicy,
    config: &LocalizeConfig,
) -> Result<LocalizationResult, LocalizationError> {
    if stream.frames.is_empty() {
        return Err(LocalizationError::EmptyStream);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let initial_poses = dead_reckon(stream);
    let tracks = collect_tracks(stream);
    let tracking_policy = tracking_policy_from(policy);

    let mut graph = Graph::new();
    for frame in &stream.frames {
        graph.add_variable(
            VariableKey::nav(frame.frame_id),
            VarValue::Pose(initial_poses[&frame.frame_id]),
        );
    }
    // Anchor on the known starting pose; everything downstream is odometry
    // and landmark measurements.
    graph.add_factor(Factor::PriorPose {
        key: VariableKey::nav(stream.frames[0].frame_id),
        measured: stream.frames[0].true_pose,
        covariance: Matrix6::identity() * 1e-6,
    });
    for (i, j, rel, n_sub) in frame_odometry(stream) {
        graph.add_factor(Factor::Odometry {
            key_i: VariableKey::nav(i),
            key_j: VariableKey::nav(j),
            measured: rel,
            covariance: odometry_covariance(stream.odom_noise, n_sub),
        });
    }

    let pix_cov = pixel_covariance(stream.pixel_noise_std);
    let db_ids: Vec<u64> = db.landmarks.keys().copied().collect();
    // Per track: whether it was matched, and whether its gate is open.
    let mut track_status: BTreeMap<u64, (bool, bool)> = BTreeMap::new();

    for (&track_id, (hist, obs)) in &tracks {
        // Simulated matching, deterministic in (seed, track order).
        let mut matched_entry = None;
        if let Some(entry) = db.landmarks.get(&track_id) {
            let recall = config.matcher.match_recall
                * config
                    .matcher
                    .dropout_by_class
                    .get(&entry.semantic_class)
                    .copied()
                    .unwrap_or(1.0);
            if recall > 0.0 && rng.gen_range(0.0..1.0) < recall {
                let mut target = track_id;
                if config.matcher.false_match_rate > 0.0
                    && rng.gen_range(0.0..1.0) < config.matcher.false_match_rate
                    && db_ids.len() > 1
                {
                    // A false match points at a random OTHER entry.
                    let mut k = rng.gen_range(0..db_ids.len() - 1);
                    if db_ids[k] == track_id {
                        k = db_ids.len() - 1;
                    }
                    target = db_ids[k];
                }
                matched_entry = Some(&db.landmarks[&target]);
            }
        }

        if let Some(entry) = matched_entry {
            let mut open = true;
            if config.live_label_gating {
                open &= decide_condition(track_id, hist, policy).is_open();
            }
            if config.reject_invalid_db_class {
                open &= policy.is_valid(entry.semantic_class);
            }
            graph.declare_gate(track_id, open);
            for (frame_id, pixel) in obs {
                graph.add_gated_factor(
                    Factor::MappedLandmark {
                        nav_key: VariableKey::nav(*frame_id),
                        point: entry.position,
                        pixel: *pixel,
                        covariance: pix_cov,
                        intrinsics: stream.intrinsics,
                    },
                    track_id,
                );
            }
            track_status.insert(track_id, (true, open));
        } else {
            // Unmatched: treat as a live track with tracking-style gating.
            let open = decide_condition(track_id, hist, &tracking_policy).is_open();
            track_status.insert(track_id, (false, open));
            if !open || obs.len() < 2 {
                continue;
            }
            let rays: Vec<(Pose3, Vector2<f64>)> = obs
                .iter()
                .map(|(kf, px)| (initial_poses[kf], *px))
                .collect();
            let Ok(point) = triangulate(&rays, &stream.intrinsics) else {
                continue;
            };
            graph.add_variable(VariableKey::landmark(track_id), VarValue::Point(point));
            graph.declare_gate(track_id, true);
            for (frame_id, pixel) in obs {
                graph.add_gated_factor(
                    Factor::Projection {
                        nav_key: VariableKey::nav(*frame_id),
                        landmark_key: VariableKey::landmark(track_id),
                        pixel: *pixel,
                        covariance: pix_cov,
                        intrinsics: stream.intrinsics,
                    },
                    track_id,
                );
            }
        }
    }

    let (values, report) = solve(&graph, &SolveOptions::default())?;

    let mut trajectory = Vec::with_capacity(stream.frames.len());
    let mut match_counts = Vec::with_capacity(stream.frames.len());
    for frame in &stream.frames {
        trajectory.push((
            frame.t,
            *values
                .pose(&VariableKey::nav(frame.frame_id))
                .expect("nav state solved"),
        ));
        let mut counts = FrameMatchCounts {
            frame_id: frame.frame_id,
            ..Default::default()
        };
        for obs in &frame.observations {
            if let Some(&(matched, open)) = track_status.get(&obs.landmark_id) {
                if matched {
                    counts.matched += 1;
                    if open {
                        counts.gated += 1;
                    }
                }
            }
        }
        match_counts.push(counts);
    }

    Ok(LocalizationResult {
        trajectory,
        match_counts,
        report,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ResectionStats {
    pub rms_reprojection: f64,
    pub max_reprojection: f64,
    pub matches_used: usize,
    pub iterations: usize,
}

/// Recover a camera pose from 2D-3D correspondences by minimizing
/// reprojection error, starting from `initial`.
pub fn resect_pose(
    matches: &[(Vector2<f64>, Vector3<f64>)],
    k: &CameraIntrinsics,
    initial: &Pose3,
) -> Result<(Pose3, ResectionStats), LocalizationError> {
    if matches.len() < 4 {
        return Err(LocalizationError::InsufficientMatches(matches.len()));
    }
    let mut graph = Graph::new();
    let key = VariableKey::nav(0);
    graph.add_variable(key, VarValue::Pose(*initial));
    let cov = pixel_covariance(0.0);
    for (pixel, point) in matches {
        graph.add_factor(Factor::MappedLandmark {
            nav_key: key,
            point: *point,
            pixel: *pixel,
            covariance: cov,
            intrinsics: *k,
        });
    }
    let (values, report) = solve(&graph, &SolveOptions::default())?;
    let pose = *values.pose(&key).expect("pose solved");

    let mut stats = ResectionStats {
        matches_used: matches.len(),
        iterations: report.iterations,
        ..Default::default()
    };
    let mut sum_sq = 0.0;
    for (pixel, point) in matches {
        let err = match project(point, &pose, k) {
            Ok(p) => (p.pixel - pixel).norm(),
            Err(_) => f64::INFINITY,
        };
        sum_sq += err * err;
        stats.max_reprojection = stats.max_reprojection.max(err);
    }
    stats.rms_reprojection = (sum_sq / matches.len() as f64).sqrt();
    Ok((pose, stats))
}
