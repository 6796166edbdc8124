//! Trajectory error metrics and gated-vs-ungated comparison runs.

use std::fmt::Write as _;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::Pose3;
use crate::localization::{localize, LocalizationError, LocalizeConfig};
use crate::mapping::{build_map, MappingError};
use crate::semantic::{default_policy, GateContext, GatePolicy};
use crate::sim::{advance_dynamics, generate_world, synthesize, ScenarioConfig, SimError};

/// Timestamped pose sequence, the exchange format between localization and
/// evaluation.
pub type Trajectory = Vec<(f64, Pose3)>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("timestamp mismatch: {0}")]
    TimestampMismatch(String),
    #[error("need at least 2 seeds, got {0}")]
    TooFewSeeds(usize),
    #[error("csv parse: {0}")]
    CsvParse(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Localization(#[from] LocalizationError),
}

/// Position-error statistics of one estimated trajectory against ground
/// truth, plus the drift rate (final error over traveled distance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub rms_3d: f64,
    pub median_3d: f64,
    pub p90_3d: f64,
    pub final_error: f64,
    pub path_length: f64,
    /// `100 * final_error / path_length`, percent.
    pub drift_rate: f64,
}

/// Per-sample 3D position errors of timestamp-aligned trajectories.
///
/// Median uses lower interpolation (`sorted[(n-1)/2]`), the 90th percentile
/// uses nearest rank (`sorted[ceil(0.9 n)-1]`); both are deterministic and
/// order-independent. No spatial alignment is applied: both trajectories
/// must already live in the same (geo-referenced) frame.
pub fn compute_stats(estimated: &Trajectory, ground_truth: &Trajectory) -> Result<ErrorStats, EvalError> {
    if estimated.len() != ground_truth.len() {
        return Err(EvalError::TimestampMismatch(format!(
            "{} estimated vs {} ground-truth samples",
            estimated.len(),
            ground_truth.len()
        )));
    }
    if estimated.is_empty() {
        return Err(EvalError::TimestampMismatch("empty trajectories".into()));
    }
    let mut errors = Vec::with_capacity(estimated.len());
    for ((te, pe), (tg, pg)) in estimated.iter().zip(ground_truth) {
        if te != tg {
            return Err(EvalError::TimestampMismatch(format!(
                "estimated t={te} vs ground-truth t={tg}"
            )));
        }
        errors.push((pe.translation - pg.translation).norm());
    }

    let n = errors.len();
    let rms_3d = (errors.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    let final_error = *errors.last().unwrap();
    let mut sorted = errors;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_3d = sorted[(n - 1) / 2];
    let p90_3d = sorted[((0.9 * n as f64).ceil() as usize).max(1) - 1];

    let path_length: f64 = ground_truth
        .windows(2)
        .map(|w| (w[1].1.translation - w[0].1.translation).norm())
        .sum();
    let drift_rate = if path_length > 0.0 {
        100.0 * final_error / path_length
    } else {
        0.0
    };

    Ok(ErrorStats {
        rms_3d,
        median_3d,
        p90_3d,
        final_error,
        path_length,
        drift_rate,
    })
}

pub const STATS_CSV_HEADER: &str = "run,rms_3d,median_3d,p90_3d,final_error,path_length,drift_rate";

pub fn stats_csv_row(run: &str, s: &ErrorStats) -> String {
    format!(
        "{run},{},{},{},{},{},{}",
        s.rms_3d, s.median_3d, s.p90_3d, s.final_error, s.path_length, s.drift_rate
    )
}

/// Paired gated/ungated statistics of one seed.
#[derive(Debug, Clone, Copy)]
pub struct SeedComparison {
    pub seed: u64,
    pub gated: ErrorStats,
    pub ungated: ErrorStats,
}

#[derive(Debug, Clone, Default)]
pub struct ComparisonReport {
    pub rows: Vec<SeedComparison>,
}

impl ComparisonReport {
    /// Seeds where the gated run has strictly lower RMS.
    pub fn rms_wins(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.gated.rms_3d < r.ungated.rms_3d)
            .count()
    }

    /// Mean of per-seed relative RMS improvement `(ungated - gated) / ungated`.
    pub fn mean_rms_improvement(&self) -> f64 {
        let sum: f64 = self
            .rows
            .iter()
            .map(|r| (r.ungated.rms_3d - r.gated.rms_3d) / r.ungated.rms_3d)
            .sum();
        sum / self.rows.len() as f64
    }

    pub fn mean_median_improvement(&self) -> f64 {
        let sum: f64 = self
            .rows
            .iter()
            .map(|r| (r.ungated.median_3d - r.gated.median_3d) / r.ungated.median_3d)
            .sum();
        sum / self.rows.len() as f64
    }

    /// One row per seed-variant.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,variant,rms_3d,median_3d,p90_3d,final_error,path_length,drift_rate\n");
        for r in &self.rows {
            for (variant, s) in [("gated", &r.gated), ("ungated", &r.ungated)] {
                let _ = writeln!(
                    out,
                    "{},{variant},{},{},{},{},{},{}",
                    r.seed, s.rms_3d, s.median_3d, s.p90_3d, s.final_error, s.path_length, s.drift_rate
                );
            }
        }
        out
    }
}

/// Options of a paired comparison experiment.
#[derive(Debug, Clone)]
pub struct CompareOptions {
    /// Gate the map-building phase. The headline experiment maps WITHOUT
    /// gating so the database is contaminated by dynamic-class landmarks.
    pub map_gating: bool,
    /// Seconds between the mapping session and the localization session;
    /// moving landmarks advance by this much.
    pub session_time_offset: f64,
    pub localize: LocalizeConfig,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            map_gating: false,
            session_time_offset: 4.0,
            localize: LocalizeConfig::default(),
        }
    }
}

/// For each seed: build a map from one session, localize a later GPS-denied
/// session against it with gating on and off, and score both against ground
/// truth.
pub fn run_comparison(
    config: &ScenarioConfig,
    seeds: &[u64],
    options: &CompareOptions,
) -> Result<ComparisonReport, EvalError> {
    if seeds.len() < 2 {
        return Err(EvalError::TooFewSeeds(seeds.len()));
    }
    let mut report = ComparisonReport::default();
    for &seed in seeds {
        let mut scenario = config.clone();
        scenario.seed = seed;
        let world = generate_world(&scenario)?;
        let map_stream = synthesize(&scenario, &world)?;
        let map_policy = if options.map_gating {
            default_policy(GateContext::Mapping)
        } else {
            GatePolicy::accept_all(GateContext::Mapping)
        };
        let (db, _) = build_map(&map_stream, &map_policy)?;

        let later = advance_dynamics(&world, options.session_time_offset);
        let mut session = scenario.clone();
        session.seed = seed.wrapping_add(0x5e55_1011);
        let mut stream = synthesize(&session, &later)?;
        stream.gps.clear();
        let ground_truth: Trajectory = stream.frames.iter().map(|f| (f.t, f.true_pose)).collect();

        let mut loc_cfg = options.localize.clone();
        loc_cfg.seed = seed;
        let gated = localize(
            &stream,
            &db,
            &default_policy(GateContext::Localization),
            &loc_cfg,
        )?;
        let ungated = localize(
            &stream,
            &db,
            &GatePolicy::accept_all(GateContext::Localization),
            &loc_cfg,
        )?;

        report.rows.push(SeedComparison {
            seed,
            gated: compute_stats(&gated.trajectory, &ground_truth)?,
            ungated: compute_stats(&ungated.trajectory, &ground_truth)?,
        });
    }
    Ok(report)
}

pub const TRAJECTORY_CSV_HEADER: &str = "t,x,y,z,qw,qx,qy,qz";

/// Full-precision trajectory CSV; a write/read cycle is bit-exact.
pub fn trajectory_to_csv(trajectory: &Trajectory) -> String {
    let mut out = String::from(TRAJECTORY_CSV_HEADER);
    out.push('\n');
    for (t, pose) in trajectory {
        let q = pose.rotation.quaternion();
        let p = &pose.translation;
        let _ = writeln!(out, "{t},{},{},{},{},{},{},{}", p[0], p[1], p[2], q.w, q.i, q.j, q.k);
    }
    out
}

pub fn trajectory_from_csv(text: &str) -> Result<Trajectory, EvalError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRAJECTORY_CSV_HEADER => {}
        other => {
            return Err(EvalError::CsvParse(format!(
                "bad header {other:?}, expected `{TRAJECTORY_CSV_HEADER}`"
            )))
        }
    }
    let mut out = Trajectory::new();
    for (idx, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(EvalError::CsvParse(format!(
                "row {}: {} fields, expected 8",
                idx + 2,
                fields.len()
            )));
        }
        let mut nums = [0.0f64; 8];
        for (i, f) in fields.iter().enumerate() {
            nums[i] = f.trim().parse().map_err(|_| {
                EvalError::CsvParse(format!("row {}: bad number `{f}`", idx + 2))
            })?;
        }
        out.push((
            nums[0],
            Pose3::new(
                UnitQuaternion::new_unchecked(Quaternion::new(nums[4], nums[5], nums[6], nums[7])),
                Vector3::new(nums[1], nums[2], nums[3]),
            ),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_trajectory(n: usize) -> Trajectory {
        (0..n)
            .map(|i| {
                (
                    i as f64 * 0.25,
                    Pose3::new(
                        UnitQuaternion::identity(),
                        Vector3::new(i as f64, 0.0, 0.0),
                    ),
                )
            })
            .collect()
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let t = line_trajectory(20);
        let s = compute_stats(&t, &t).unwrap();
        assert_eq!(s.rms_3d, 0.0);
        assert_eq!(s.median_3d, 0.0);
        assert_eq!(s.p90_3d, 0.0);
        assert_eq!(s.final_error, 0.0);
        assert_eq!(s.drift_rate, 0.0);
        assert_relative_eq!(s.path_length, 19.0);
    }

    #[test]
    fn constant_offset_is_exact() {
        let gt = line_trajectory(17);
        let est: Trajectory = gt
            .iter()
            .map(|(t, p)| {
                (
                    *t,
                    Pose3::new(p.rotation, p.translation + Vector3::new(0.0, 0.0, 1.0)),
                )
            })
            .collect();
        let s = compute_stats(&est, &gt).unwrap();
        assert_eq!(s.rms_3d, 1.0);
        assert_eq!(s.median_3d, 1.0);
        assert_eq!(s.p90_3d, 1.0);
        assert_eq!(s.final_error, 1.0);
    }

    #[test]
    fn drift_rate_reference_values() {
        // final error 12.6363 m over a 1710 m path -> 0.7390 %.
        let n = 100;
        let step = 1710.0 / (n as f64 - 1.0);
        let gt: Trajectory = (0..n)
            .map(|i| {
                (
                    i as f64,
                    Pose3::new(
                        UnitQuaternion::identity(),
                        Vector3::new(i as f64 * step, 0.0, 0.0),
                    ),
                )
            })
            .collect();
        let mut est = gt.clone();
        let last = est.last_mut().unwrap();
        last.1.translation += Vector3::new(0.0, 12.6363, 0.0);
        let s = compute_stats(&est, &gt).unwrap();
        assert_relative_eq!(s.final_error, 12.6363, epsilon = 1e-12);
        assert_relative_eq!(s.path_length, 1710.0, epsilon = 1e-9);
        assert!((s.drift_rate - 0.7390).abs() < 1e-4, "drift {}", s.drift_rate);
    }

    #[test]
    fn timestamp_mismatch_is_an_error() {
        let a = line_trajectory(5);
        let mut b = line_trajectory(5);
        b[3].0 += 1e-3;
        assert!(matches!(
            compute_stats(&a, &b),
            Err(EvalError::TimestampMismatch(_))
        ));
        assert!(matches!(
            compute_stats(&a, &line_trajectory(4)),
            Err(EvalError::TimestampMismatch(_))
        ));
    }

    #[test]
    fn invariant_under_common_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = line_trajectory(30);
        let est: Trajectory = gt
            .iter()
            .map(|(t, p)| {
                (
                    *t,
                    Pose3::new(
                        p.rotation,
                        p.translation
                            + Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()),
                    ),
                )
            })
            .collect();
        let transform = Pose3::exp(&crate::geometry::Twist6 {
            rotational: Vector3::new(0.3, -0.2, 0.9),
            translational: Vector3::new(10.0, -4.0, 2.0),
        });
        let apply = |t: &Trajectory| -> Trajectory {
            t.iter().map(|(s, p)| (*s, transform.compose(p))).collect()
        };
        let a = compute_stats(&est, &gt).unwrap();
        let b = compute_stats(&apply(&est), &apply(&gt)).unwrap();
        assert_relative_eq!(a.rms_3d, b.rms_3d, epsilon = 1e-9);
        assert_relative_eq!(a.median_3d, b.median_3d, epsilon = 1e-9);
        assert_relative_eq!(a.p90_3d, b.p90_3d, epsilon = 1e-9);
        assert_relative_eq!(a.path_length, b.path_length, epsilon = 1e-9);
    }

    #[test]
    fn percentiles_are_order_independent() {
        let gt = line_trajectory(25);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let offsets: Vec<f64> = (0..25).map(|_| rng.gen::<f64>()).collect();
        let make = |order: &[usize]| -> (Trajectory, Trajectory) {
            let gt2: Trajectory = order.iter().map(|&i| gt[i]).collect();
            let est: Trajectory = order
                .iter()
                .map(|&i| {
                    let (t, p) = gt[i];
                    (t, Pose3::new(p.rotation, p.translation + Vector3::new(0.0, offsets[i], 0.0)))
                })
                .collect();
            (est, gt2)
        };
        let fwd: Vec<usize> = (0..25).collect();
        let rev: Vec<usize> = (0..25).rev().collect();
        let (ef, gf) = make(&fwd);
        let (er, gr) = make(&rev);
        let a = compute_stats(&ef, &gf).unwrap();
        let b = compute_stats(&er, &gr).unwrap();
        assert_eq!(a.median_3d, b.median_3d);
        assert_eq!(a.p90_3d, b.p90_3d);
        assert_eq!(a.rms_3d, b.rms_3d);
    }

    #[test]
    fn too_few_seeds_is_an_error() {
        let config = crate::sim::test_config();
        assert!(matches!(
            run_comparison(&config, &[1], &CompareOptions::default()),
            Err(EvalError::TooFewSeeds(1))
        ));
    }

    #[test]
    fn static_noiseless_comparison_is_a_wash() {
        let mut config = crate::sim::test_config();
        config.dynamic_fraction = 0.0;
        config.class_mix = [0.0; crate::semantic::NUM_CLASSES];
        config.class_mix[crate::semantic::SemanticClass::Building as usize] = 0.6;
        config.class_mix[crate::semantic::SemanticClass::Pole as usize] = 0.4;
        config.n_landmarks = 40;
        let report = run_comparison(&config, &[1, 2], &CompareOptions::default()).unwrap();
        for r in &report.rows {
            // All landmarks valid-class and static: same factors active in
            // both variants, so the runs agree to solver tolerance.
            assert!((r.gated.rms_3d - r.ungated.rms_3d).abs() < 1e-6);
        }
    }

    #[test]
    fn trajectory_csv_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let traj: Trajectory = (0..50)
            .map(|i| {
                (
                    i as f64 * 0.05,
                    Pose3::exp(&crate::geometry::Twist6 {
                        rotational: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                        translational: Vector3::new(
                            rng.gen::<f64>() * 100.0,
                            rng.gen::<f64>() * 100.0,
                            rng.gen(),
                        ),
                    }),
                )
            })
            .collect();
        let csv = trajectory_to_csv(&traj);
        let back = trajectory_from_csv(&csv).unwrap();
        assert_eq!(traj, back);
        assert_eq!(csv, trajectory_to_csv(&back));
    }

    #[test]
    fn csv_parse_errors() {
        assert!(matches!(
            trajectory_from_csv("wrong,header\n"),
            Err(EvalError::CsvParse(_))
        ));
        let text = format!("{TRAJECTORY_CSV_HEADER}\n1,2,3\n");
        assert!(matches!(trajectory_from_csv(&text), Err(EvalError::CsvParse(_))));
    }
}
