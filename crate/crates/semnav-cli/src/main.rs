//! `semnav`: scenario simulation, map building, GPS-denied localization, and
//! evaluation as reproducible command-line experiments.
//!
//! Every command writes a manifest into its output directory before any other
//! artifact, refuses to overwrite existing outputs unless `--force` is given,
//! and is deterministic: identical inputs produce byte-identical outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use semnav::eval::{
    compute_stats, run_comparison, stats_csv_row, trajectory_from_csv, trajectory_to_csv,
    CompareOptions, Trajectory, STATS_CSV_HEADER,
};
use semnav::localization::{localize, LocalizeConfig, MatcherConfig};
use semnav::mapping::{build_map, db_to_string, load_db, MappingReport};
use semnav::semantic::{default_policy, GateContext, GatePolicy};
use semnav::sim::{
    generate_world, parse_config, read_stream, synthesize, write_stream, STREAM_FILE,
};

/// Environment variable that re-roots relative output paths.
const OUT_ROOT_ENV: &str = "SEMNAV_OUT_ROOT";
const MANIFEST_FILE: &str = "manifest.txt";
const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

#[derive(Parser)]
#[command(name = "semnav", version, about = "Semantic gated-factor navigation experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn is_on(self) -> bool {
        self == OnOff::On
    }
}

#[derive(clap::Args)]
struct MatcherFlags {
    /// Probability a mapped landmark's track is matched.
    #[arg(long, default_value_t = 1.0)]
    match_recall: f64,
    /// Probability a match points at the wrong database entry.
    #[arg(long, default_value_t = 0.0)]
    false_match_rate: f64,
}

impl MatcherFlags {
    fn to_config(&self) -> MatcherConfig {
        MatcherConfig {
            match_recall: self.match_recall,
            false_match_rate: self.false_match_rate,
            ..Default::default()
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the sensor stream and ground truth of a scenario config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Build a landmark database from a simulated stream directory.
    Map {
        /// Directory containing stream.txt (from `simulate`).
        #[arg(long)]
        stream: PathBuf,
        /// Output directory for map.db, the mapping report, and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Semantic gating of landmarks during mapping.
        #[arg(long, value_enum, default_value = "on")]
        gating: OnOff,
        /// Label-evidence floor before a gate may open.
        #[arg(long, default_value_t = 2)]
        min_observations: u32,
        #[arg(long)]
        force: bool,
    },
    /// Localize a GPS-denied stream against a landmark database.
    Localize {
        #[arg(long)]
        stream: PathBuf,
        /// map.db from `map`.
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "on")]
        gating: OnOff,
        #[arg(long, default_value_t = 2)]
        min_observations: u32,
        #[command(flatten)]
        matcher: MatcherFlags,
        /// Seed of the matcher randomness.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Gate mapped-landmark factors by the current run's labels.
        #[arg(long, value_enum, default_value = "on")]
        live_label_gating: OnOff,
        /// Also reject matches whose stored database class is invalid.
        #[arg(long, value_enum, default_value = "on")]
        reject_invalid_db_class: OnOff,
        #[arg(long)]
        force: bool,
    },
    /// Score an estimated trajectory against ground truth.
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Output directory for stats.csv and the manifest.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Paired gated/ungated experiment over several seeds.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seed list (at least 2).
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Gate the map-building phase (off = contaminated databases).
        #[arg(long, value_enum, default_value = "off")]
        map_gating: OnOff,
        /// Seconds between mapping and localization sessions.
        #[arg(long, default_value_t = 4.0)]
        session_offset: f64,
        #[command(flatten)]
        matcher: MatcherFlags,
        #[arg(long)]
        force: bool,
    },
}

fn resolve_out(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Ok(root) = std::env::var(OUT_ROOT_ENV) {
            return PathBuf::from(root).join(path);
        }
    }
    path.to_path_buf()
}

/// Refuse to clobber a prior run's artifacts unless forced.
fn prepare_out_dir(out: &Path, force: bool) -> Result<(), String> {
    if out.join(MANIFEST_FILE).exists() && !force {
        return Err(format!(
            "output directory {} already holds a run (use --force to overwrite)",
            out.display()
        ));
    }
    std::fs::create_dir_all(out).map_err(|e| format!("io error: {e}"))
}

fn read_file(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("io error: {}: {e}", path.display()))
}

fn write_file(path: &Path, content: &str) -> Result<(), String> {
    std::fs::write(path, content).map_err(|e| format!("io error: {}: {e}", path.display()))
}

fn sha256_hex(data: &str) -> String {
    hex::encode(Sha256::digest(data.as_bytes()))
}

/// The manifest ties a run to its exact inputs: command, per-input content
/// hashes, seeds, and artifact format versions. It contains no timestamps so
/// reruns are byte-identical.
fn manifest(command: &str, inputs: &[(&str, &Path, &str)], extra: &[(String, String)]) -> String {
    let mut out = String::from("SEMNAV_MANIFEST v1\n");
    let _ = writeln!(out, "command {command}");
    for (name, path, content) in inputs {
        let _ = writeln!(out, "{name} {}", path.display());
        let _ = writeln!(out, "{name}_sha256 {}", sha256_hex(content));
    }
    for (k, v) in extra {
        let _ = writeln!(out, "{k} {v}");
    }
    let _ = writeln!(out, "semnav_version {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "stream_format SEMNAV_STREAM v1");
    let _ = writeln!(out, "db_format SEMNAV_DB v1");
    out
}

fn gate_policy(context: GateContext, gating: OnOff, min_observations: u32) -> GatePolicy {
    if gating.is_on() {
        let mut p = default_policy(context);
        p.min_observations = min_observations;
        p
    } else {
        GatePolicy::accept_all(context)
    }
}

fn format_mapping_report(report: &MappingReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "landmarks_in {}", report.landmarks_in);
    let _ = writeln!(out, "landmarks_kept {}", report.landmarks_kept);
    for (class, n) in &report.gated_out {
        let _ = writeln!(out, "gated_out {} {n}", class.name());
    }
    let _ = writeln!(out, "degenerate {}", report.degenerate);
    let _ = writeln!(out, "final_cost {}", report.final_cost);
    let _ = writeln!(out, "iterations {}", report.iterations);
    out
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.cmd {
        Cmd::Simulate { config, out, force } => {
            let text = read_file(&config)?;
            let scenario = parse_config(&text).map_err(|e| e.to_string())?;
            let out = resolve_out(&out);
            prepare_out_dir(&out, force)?;
            write_file(
                &out.join(MANIFEST_FILE),
                &manifest(
                    "simulate",
                    &[("config", &config, &text)],
                    &[("seed".into(), scenario.seed.to_string())],
                ),
            )?;
            let world = generate_world(&scenario).map_err(|e| e.to_string())?;
            let stream = synthesize(&scenario, &world).map_err(|e| e.to_string())?;
            write_file(&out.join(STREAM_FILE), &write_stream(&stream))?;
            let gt: Trajectory = stream.frames.iter().map(|f| (f.t, f.true_pose)).collect();
            write_file(&out.join(GROUND_TRUTH_FILE), &trajectory_to_csv(&gt))?;
            println!(
                "simulated {} frames, {} odometry samples, {} gps fixes -> {}",
                stream.frames.len(),
                stream.odometry.len(),
                stream.gps.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Map {
            stream,
            out,
            gating,
            min_observations,
            force,
        } => {
            let stream_path = stream.join(STREAM_FILE);
            let text = read_file(&stream_path)?;
            let obs = read_stream(&text).map_err(|e| e.to_string())?;
            let out = resolve_out(&out);
            prepare_out_dir(&out, force)?;
            write_file(
                &out.join(MANIFEST_FILE),
                &manifest(
                    "map",
                    &[("stream", &stream_path, &text)],
                    &[
                        ("gating".into(), if gating.is_on() { "on" } else { "off" }.into()),
                        ("min_observations".into(), min_observations.to_string()),
                    ],
                ),
            )?;
            let policy = gate_policy(GateContext::Mapping, gating, min_observations);
            let (db, report) = build_map(&obs, &policy).map_err(|e| e.to_string())?;
            write_file(&out.join("map.db"), &db_to_string(&db))?;
            write_file(&out.join("mapping_report.txt"), &format_mapping_report(&report))?;
            println!(
                "mapped {} / {} landmarks -> {}",
                report.landmarks_kept,
                report.landmarks_in,
                out.display()
            );
            Ok(())
        }
        Cmd::Localize {
            stream,
            db,
            out,
            gating,
            min_observations,
            matcher,
            seed,
            live_label_gating,
            reject_invalid_db_class,
            force,
        } => {
            let stream_path = stream.join(STREAM_FILE);
            let stream_text = read_file(&stream_path)?;
            let mut obs = read_stream(&stream_text).map_err(|e| e.to_string())?;
            // GPS-denied by definition.
            obs.gps.clear();
            let db_text = read_file(&db)?;
            let database = load_db(&db).map_err(|e| e.to_string())?;
            let out = resolve_out(&out);
            prepare_out_dir(&out, force)?;
            write_file(
                &out.join(MANIFEST_FILE),
                &manifest(
                    "localize",
                    &[("stream", &stream_path, &stream_text), ("db", &db, &db_text)],
                    &[
                        ("seed".into(), seed.to_string()),
                        ("gating".into(), if gating.is_on() { "on" } else { "off" }.into()),
                        ("min_observations".into(), min_observations.to_string()),
                        ("match_recall".into(), matcher.match_recall.to_string()),
                        ("false_match_rate".into(), matcher.false_match_rate.to_string()),
                    ],
                ),
            )?;
            let policy = gate_policy(GateContext::Localization, gating, min_observations);
            let cfg = LocalizeConfig {
                matcher: matcher.to_config(),
                seed,
                live_label_gating: live_label_gating.is_on(),
                reject_invalid_db_class: reject_invalid_db_class.is_on(),
            };
            let result = localize(&obs, &database, &policy, &cfg).map_err(|e| e.to_string())?;
            write_file(&out.join("estimated.csv"), &trajectory_to_csv(&result.trajectory))?;
            let gt: Trajectory = obs.frames.iter().map(|f| (f.t, f.true_pose)).collect();
            write_file(&out.join(GROUND_TRUTH_FILE), &trajectory_to_csv(&gt))?;
            let matched: usize = result.match_counts.iter().map(|c| c.matched).sum();
            let open: usize = result.match_counts.iter().map(|c| c.gated).sum();
            println!(
                "localized {} frames, {matched} matches ({open} gate-open) -> {}",
                result.trajectory.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Evaluate { est, gt, out, force } => {
            let est_text = read_file(&est)?;
            let gt_text = read_file(&gt)?;
            let est_traj = trajectory_from_csv(&est_text).map_err(|e| e.to_string())?;
            let gt_traj = trajectory_from_csv(&gt_text).map_err(|e| e.to_string())?;
            let out = resolve_out(&out);
            prepare_out_dir(&out, force)?;
            write_file(
                &out.join(MANIFEST_FILE),
                &manifest(
                    "evaluate",
                    &[("est", &est, &est_text), ("gt", &gt, &gt_text)],
                    &[],
                ),
            )?;
            let stats = compute_stats(&est_traj, &gt_traj).map_err(|e| e.to_string())?;
            let csv = format!("{STATS_CSV_HEADER}\n{}\n", stats_csv_row("run", &stats));
            write_file(&out.join("stats.csv"), &csv)?;
            println!(
                "rms {:.4} m, median {:.4} m, p90 {:.4} m, drift {:.4} %",
                stats.rms_3d, stats.median_3d, stats.p90_3d, stats.drift_rate
            );
            Ok(())
        }
        Cmd::Compare {
            config,
            seeds,
            out,
            map_gating,
            session_offset,
            matcher,
            force,
        } => {
            let text = read_file(&config)?;
            let scenario = parse_config(&text).map_err(|e| e.to_string())?;
            let out = resolve_out(&out);
            prepare_out_dir(&out, force)?;
            let seeds_str: Vec<String> = seeds.iter().map(|s| s.to_string()).collect();
            write_file(
                &out.join(MANIFEST_FILE),
                &manifest(
                    "compare",
                    &[("config", &config, &text)],
                    &[
                        ("seeds".into(), seeds_str.join(",")),
                        (
                            "map_gating".into(),
                            if map_gating.is_on() { "on" } else { "off" }.into(),
                        ),
                        ("session_offset".into(), session_offset.to_string()),
                        ("match_recall".into(), matcher.match_recall.to_string()),
                        ("false_match_rate".into(), matcher.false_match_rate.to_string()),
                    ],
                ),
            )?;
            let options = CompareOptions {
                map_gating: map_gating.is_on(),
                session_time_offset: session_offset,
                localize: LocalizeConfig {
                    matcher: matcher.to_config(),
                    ..Default::default()
                },
            };
            let report = run_comparison(&scenario, &seeds, &options).map_err(|e| e.to_string())?;
            write_file(&out.join("compare.csv"), &report.to_csv())?;
            println!(
                "{} seeds: gated RMS lower in {}, mean RMS improvement {:.1} %",
                report.rows.len(),
                report.rms_wins(),
                100.0 * report.mean_rms_improvement()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
