//! Batch Levenberg-Marquardt over a gated factor graph.
//!
//! The normal equations are assembled block-sparse and solved by a sparse
//! LDL^T factorization with deterministic variable ordering (landmarks first,
//! then navigation states, each by key index), so repeated solves on
//! identical inputs are bit-identical.

use std::collections::BTreeMap;

use nalgebra::DVector;
use sprs::{CsMat, TriMat};
use sprs_ldl::Ldl;

use super::factors::{residual, FactorLinearization, Values, VariableKey};
use super::graph::Graph;
use super::FactorGraphError;

const LAMBDA_MAX: f64 = 1e12;

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub lm_lambda0: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 100,
            lm_lambda0: 1e-4,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveReport {
    /// Accepted LM iterations.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    /// Residuals deactivated because the point fell behind the camera.
    pub behind_camera_skips: usize,
}

/// Sum of squared whitened residuals over active factors. Closed gates
/// contribute exactly zero; behind-camera residuals contribute zero for the
/// evaluation.
pub fn total_cost(graph: &Graph, values: &Values) -> f64 {
    let mut cost = 0.0;
    for gf in graph.factors() {
        if !graph.is_active(gf) {
            continue;
        }
        if let Ok(lin) = residual(&gf.factor, values) {
            cost += lin.squared_norm();
        }
    }
    cost
}

struct Ordering {
    offsets: BTreeMap<VariableKey, usize>,
    total_dim: usize,
}

/// Free variables are exactly those carrying at least one successfully
/// linearized residual block; a variable whose residuals were all skipped
/// (all observations behind the camera) would otherwise contribute an
/// exactly-zero column.
fn build_ordering(lin: &Linearization) -> Ordering {
    let mut keys: Vec<VariableKey> = Vec::new();
    for f in &lin.factors {
        keys.extend(f.jacobians.iter().map(|(k, _)| *k));
    }
    keys.sort();
    keys.dedup();
    let mut offsets = BTreeMap::new();
    let mut total = 0usize;
    for k in keys {
        offsets.insert(k, total);
        total += k.local_dim();
    }
    Ordering {
        offsets,
        total_dim: total,
    }
}

struct Linearization {
    cost: f64,
    factors: Vec<FactorLinearization>,
    behind_camera_skips: usize,
}

fn linearize(graph: &Graph, values: &Values) -> Result<Linearization, FactorGraphError> {
    let mut out = Linearization {
        cost: 0.0,
        factors: Vec::new(),
        behind_camera_skips: 0,
    };
    for gf in graph.factors() {
        if !graph.is_active(gf) {
            continue;
        }
        match residual(&gf.factor, values) {
            Ok(lin) => {
                out.cost += lin.squared_norm();
                out.factors.push(lin);
            }
            Err(FactorGraphError::BehindCamera(_)) => {
                out.behind_camera_skips += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

struct NormalEquations {
    /// Triplets of the (undamped) Gauss-Newton Hessian approximation J^T J.
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
    gradient: DVector<f64>,
}

impl NormalEquations {
    fn add_triplet(&mut self, r: usize, c: usize, v: f64) {
        self.rows.push(r);
        self.cols.push(c);
        self.vals.push(v);
    }
}

fn assemble(lin: &Linearization, ordering: &Ordering) -> NormalEquations {
    let n = ordering.total_dim;
    let mut ne = NormalEquations {
        rows: Vec::new(),
        cols: Vec::new(),
        vals: Vec::new(),
        diag: vec![0.0; n],
        gradient: DVector::zeros(n),
    };

    for f in &lin.factors {
        for (a, ja) in &f.jacobians {
            // Variables outside the ordering were frozen for this solve
            // (no usable residual at the initial point); ignore blocks that
            // touch them in later relinearizations.
            let Some(&oa) = ordering.offsets.get(a) else {
                continue;
            };
            let gta = ja.transpose() * &f.residual;
            for r in 0..ja.ncols() {
                ne.gradient[oa + r] += gta[r];
            }
            for (b, jb) in &f.jacobians {
                if b < a {
                    continue;
                }
                let Some(&ob) = ordering.offsets.get(b) else {
                    continue;
                };
                let h = ja.transpose() * jb;
                for r in 0..h.nrows() {
                    for c in 0..h.ncols() {
                        let v = h[(r, c)];
                        ne.add_triplet(oa + r, ob + c, v);
                        if a != b {
                            ne.add_triplet(ob + c, oa + r, v);
                        } else if r == c {
                            ne.diag[oa + r] += v;
                        }
                    }
                }
            }
        }
    }

    ne
}

fn factorize(
    ne: &NormalEquations,
    lambda: f64,
) -> Result<sprs_ldl::LdlNumeric<f64, usize>, sprs::errors::LinalgError> {
    let n = ne.gradient.len();
    let mut rows = ne.rows.clone();
    let mut cols = ne.cols.clone();
    let mut vals = ne.vals.clone();
    if lambda > 0.0 {
        for (i, d) in ne.diag.iter().enumerate() {
            // Floor keeps the damped system positive definite even when a
            // residual dimension has locally zero gradient.
            rows.push(i);
            cols.push(i);
            vals.push(lambda * d.max(1e-12));
        }
    }
    let tri = TriMat::from_triplets((n, n), rows, cols, vals);
    let csc: CsMat<f64> = tri.to_csc();
    Ldl::new()
        .check_symmetry(sprs::SymmetryCheck::DontCheckSymmetry)
        .fill_in_reduction(sprs::FillInReduction::NoReduction)
        .numeric(csc.view())
}

/// Minimize the summed squared whitened residual of all active factors by
/// batch Levenberg-Marquardt, starting from the graph's initial values.
pub fn solve(
    graph: &Graph,
    options: &SolveOptions,
) -> Result<(Values, SolveReport), FactorGraphError> {
    let mut values = graph.initial_values().clone();
    let mut report = SolveReport::default();

    let mut lin = linearize(graph, &values)?;
    report.initial_cost = lin.cost;
    report.behind_camera_skips += lin.behind_camera_skips;
    let mut cost = lin.cost;

    let ordering = build_ordering(&lin);
    if ordering.total_dim == 0 {
        report.final_cost = cost;
        report.converged = true;
        return Ok((values, report));
    }

    let mut lambda = options.lm_lambda0;
    let mut ne = assemble(&lin, &ordering);

    // Rank-deficiency check on the undamped system at the initial point.
    // Each pivot is compared against its own variable's information scale so
    // well-posed but heterogeneously weighted graphs (tight GPS + weak
    // landmarks) are not misflagged.
    match factorize(&ne, 0.0) {
        Err(_) => return Err(FactorGraphError::UnderconstrainedGraph),
        Ok(f) => {
            for (i, &pivot) in f.d().iter().enumerate() {
                let scale = ne.diag[i];
                // Both tests must agree: the relative one alone misfires when
                // an outlier residual inflates the variable's diagonal, the
                // absolute one alone misfires on uniformly weak factors.
                if scale <= 0.0 || (pivot <= 1e-12 * scale && pivot <= 1e-6) {
                    return Err(FactorGraphError::UnderconstrainedGraph);
                }
            }
        }
    }

    loop {
        if report.iterations >= options.max_iters {
            break;
        }
        if cost == 0.0 {
            report.converged = true;
            break;
        }

        let step = match factorize(&ne, lambda) {
            Ok(f) => {
                let rhs: Vec<f64> = ne.gradient.iter().map(|g| -g).collect();
                DVector::from_vec(f.solve(&rhs[..]))
            }
            Err(_) => {
                lambda *= 10.0;
                if lambda > LAMBDA_MAX {
                    return Err(FactorGraphError::Diverged(lambda));
                }
                continue;
            }
        };

        let mut candidate = values.clone();
        for (key, offset) in &ordering.offsets {
            let dim = key.local_dim();
            let delta = DVector::from_iterator(dim, (0..dim).map(|i| step[offset + i]));
            candidate.apply_step(key, &delta);
        }

        let new_lin = linearize(graph, &candidate)?;
        if new_lin.cost < cost {
            let decrease = cost - new_lin.cost;
            values = candidate;
            cost = new_lin.cost;
            report.iterations += 1;
            report.behind_camera_skips += new_lin.behind_camera_skips;
            lambda = (lambda / 3.0).max(1e-12);
            let step_norm = step.norm();
            lin = new_lin;
            ne = assemble(&lin, &ordering);
            if decrease < options.rel_tol * cost.max(options.abs_tol)
                || step_norm < options.abs_tol
            {
                report.converged = true;
                break;
            }
        } else {
            // A rejected step that is already negligible means the current
            // point is a (local) minimum, not a divergence.
            if step.norm() < options.abs_tol.max(1e-8)
                || (new_lin.cost - cost).abs() <= options.rel_tol * cost
            {
                report.converged = true;
                break;
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                return Err(FactorGraphError::Diverged(lambda));
            }
        }
    }

    report.final_cost = cost;
    Ok((values, report))
}
