//! Semantic gated factor-graph state estimation for vehicle navigation.
//!
//! Landmark measurements participate in nonlinear least-squares inference
//! only when a per-landmark condition variable, computed by mode-voting over
//! the semantic labels of its 2D observations, marks the landmark's class as
//! valid for the current pipeline stage (tracking, mapping, or pre-mapped
//! localization).
//!
//! The crate is organized as:
//! - [`geometry`]: SE(3) pose algebra, pinhole camera, triangulation
//! - [`semantic`]: class vocabulary, label histograms, mode voting, gate policies
//! - [`factor_graph`]: variables, (gated) factors, batch Levenberg-Marquardt
//! - [`sim`]: deterministic scenario generator for worlds and sensor streams
//! - [`mapping`]: GPS-aided geo-referenced landmark database construction
//! - [`localization`]: GPS-denied navigation against a pre-built database
//! - [`eval`]: trajectory error metrics and gated-vs-ungated comparisons

pub mod eval;
pub mod factor_graph;
pub mod geometry;
pub mod localization;
pub mod mapping;
pub mod semantic;
pub mod sim;
