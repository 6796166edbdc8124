//! Graph container: variables with initial values, ordered factors, and the
//! boolean gates that switch gated factors in and out of inference.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::factors::{Factor, VarValue, Values, VariableKey};
use super::FactorGraphError;

/// A factor plus the gate (condition variable id) controlling it, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFactor {
    pub factor: Factor,
    pub gate: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    variables: Values,
    factors: Vec<GraphFactor>,
    gates: BTreeMap<u64, bool>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, key: VariableKey, initial: VarValue) {
        self.variables.insert(key, initial);
    }

    /// Add an ungated (always active) factor.
    pub fn add_factor(&mut self, factor: Factor) {
        self.factors.push(GraphFactor { factor, gate: None });
    }

    /// Add a factor controlled by gate `gate_id`. Gates not seen before are
    /// registered open.
    pub fn add_gated_factor(&mut self, factor: Factor, gate_id: u64) {
        self.gates.entry(gate_id).or_insert(true);
        self.factors.push(GraphFactor {
            factor,
            gate: Some(gate_id),
        });
    }

    /// Register a gate (or overwrite its value) without attaching a factor.
    pub fn declare_gate(&mut self, gate_id: u64, open: bool) {
        self.gates.insert(gate_id, open);
    }

    /// Open or close a gate. Subsequent cost/solve calls reflect the change.
    pub fn set_gate(&mut self, gate_id: u64, open: bool) -> Result<(), FactorGraphError> {
        match self.gates.get_mut(&gate_id) {
            Some(v) => {
                *v = open;
                Ok(())
            }
            None => Err(FactorGraphError::UnknownGate(gate_id)),
        }
    }

    pub fn gate(&self, gate_id: u64) -> Option<bool> {
        self.gates.get(&gate_id).copied()
    }

    /// A closed gate removes its factor from inference entirely: zero
    /// residual dimensions contributed.
    pub fn is_active(&self, gf: &GraphFactor) -> bool {
        match gf.gate {
            None => true,
            Some(id) => self.gates.get(&id).copied().unwrap_or(false),
        }
    }

    /// Number of factors whose gate is open or absent.
    pub fn active_factor_count(&self) -> usize {
        self.factors.iter().filter(|gf| self.is_active(gf)).count()
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[GraphFactor] {
        &self.factors
    }

    pub fn initial_values(&self) -> &Values {
        &self.variables
    }

    pub fn initial_values_mut(&mut self) -> &mut Values {
        &mut self.variables
    }

    /// Line-oriented debug dump: one factor per line with type, keys,
    /// measurement, and gate state.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, gf) in self.factors.iter().enumerate() {
            let gate = match gf.gate {
                None => "ungated".to_string(),
                Some(id) => {
                    let state = if self.is_active(gf) { "open" } else { "closed" };
                    format!("gate={id}:{state}")
                }
            };
            let keys: Vec<String> = gf
                .factor
                .keys()
                .iter()
                .map(|k| format!("{:?}{}", k.kind, k.index))
                .collect();
            let meas = match &gf.factor {
                Factor::PriorPose { measured, .. } | Factor::Odometry { measured, .. } => {
                    let q = measured.rotation;
                    let t = measured.translation;
                    format!(
                        "q=({},{},{},{}) t=({},{},{})",
                        q.w, q.i, q.j, q.k, t[0], t[1], t[2]
                    )
                }
                Factor::GpsPosition { measured, .. } => {
                    format!("p=({},{},{})", measured[0], measured[1], measured[2])
                }
                Factor::Projection { pixel, .. } => format!("px=({},{})", pixel[0], pixel[1]),
                Factor::MappedLandmark { point, pixel, .. } => format!(
                    "X=({},{},{}) px=({},{})",
                    point[0], point[1], point[2], pixel[0], pixel[1]
                ),
            };
            let _ = writeln!(
                out,
                "{i} {} [{}] {} {}",
                gf.factor.type_name(),
                keys.join(","),
                meas,
                gate
            );
        }
        out
    }
}
