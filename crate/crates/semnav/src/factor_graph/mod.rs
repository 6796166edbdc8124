//! The estimation core: variables, measurement factors (including gated
//! factors), the summed Mahalanobis cost, and a batch Levenberg-Marquardt
//! solver over the resulting nonlinear least-squares problem.

mod factors;
mod graph;
mod solver;


pub use factors::{Factor, FactorLinearization, VarKind, VarValue, Values, VariableKey, residual};
pub use graph::{Graph, GraphFactor};
pub use solver::{SolveOptions, SolveReport, solve, total_cost};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorGraphError {
    #[error("unknown variable {0:?}")]
    UnknownVariable(VariableKey),
    #[error("variable {0:?} has the wrong kind for this factor")]
    VariableKindMismatch(VariableKey),
    #[error("unknown gate id {0}")]
    UnknownGate(u64),
    #[error("covariance is not symmetric positive definite")]
    InvalidCovariance,
    #[error("behind camera: camera-frame z = {0}")]
    BehindCamera(f64),
    #[error("underconstrained graph: rank-deficient normal equations")]
    UnderconstrainedGraph,
    #[error("diverged: damping exceeded {0}")]
    Diverged(f64),
}
