//! Semantic class vocabulary, per-landmark label accumulation, mode voting,
//! and the gate policies that produce condition-variable values.

use std::fmt;

use thiserror::Error;

/// Number of semantic classes in the closed vocabulary.
pub const NUM_CLASSES: usize = 12;

/// The 12 urban segmentation classes. Integer codes 0-11 in listed order are
/// stable and appear verbatim in database files and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum SemanticClass {
    Sky = 0,
    Building = 1,
    Pole = 2,
    RoadMarking = 3,
    Road = 4,
    Pavement = 5,
    Tree = 6,
    SignSymbol = 7,
    Fence = 8,
    Vehicle = 9,
    Pedestrian = 10,
    Bike = 11,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; NUM_CLASSES] = [
        SemanticClass::Sky,
        SemanticClass::Building,
        SemanticClass::Pole,
        SemanticClass::RoadMarking,
        SemanticClass::Road,
        SemanticClass::Pavement,
        SemanticClass::Tree,
        SemanticClass::SignSymbol,
        SemanticClass::Fence,
        SemanticClass::Vehicle,
        SemanticClass::Pedestrian,
        SemanticClass::Bike,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<SemanticClass> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticClass::Sky => "Sky",
            SemanticClass::Building => "Building",
            SemanticClass::Pole => "Pole",
            SemanticClass::RoadMarking => "RoadMarking",
            SemanticClass::Road => "Road",
            SemanticClass::Pavement => "Pavement",
            SemanticClass::Tree => "Tree",
            SemanticClass::SignSymbol => "SignSymbol",
            SemanticClass::Fence => "Fence",
            SemanticClass::Vehicle => "Vehicle",
            SemanticClass::Pedestrian => "Pedestrian",
            SemanticClass::Bike => "Bike",
        }
    }

    pub fn from_name(name: &str) -> Option<SemanticClass> {
        Self::ALL.iter().copied().find(|c| c.name() == name)
    }

    /// Classes that can carry nonzero velocity in the world.
    pub fn is_dynamic_capable(self) -> bool {
        matches!(
            self,
            SemanticClass::Vehicle | SemanticClass::Pedestrian | SemanticClass::Bike
        )
    }
}

impl fmt::Display for SemanticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticError {
    #[error("empty histogram")]
    EmptyHistogram,
}

/// Per-landmark counts over the 12 semantic classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LabelHistogram {
    counts: [u32; NUM_CLASSES],
    total: u32,
}

impl LabelHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, label: SemanticClass) {
        self.counts[label as usize] += 1;
        self.total += 1;
    }

    pub fn count(&self, class: SemanticClass) -> u32 {
        self.counts[class as usize]
    }

    pub fn counts(&self) -> &[u32; NUM_CLASSES] {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn from_counts(counts: [u32; NUM_CLASSES]) -> Self {
        LabelHistogram {
            counts,
            total: counts.iter().sum(),
        }
    }

    /// The class with the strictly greatest count. On a tie the returned
    /// class is the tied class with the lowest integer code and `is_tie` is
    /// set.
    pub fn mode(&self) -> Result<(SemanticClass, bool), SemanticError> {
        if self.total == 0 {
            return Err(SemanticError::EmptyHistogram);
        }
        let mut best = 0usize;
        for i in 1..NUM_CLASSES {
            if self.counts[i] > self.counts[best] {
                best = i;
            }
        }
        let is_tie = self
            .counts
            .iter()
            .enumerate()
            .any(|(i, &c)| i != best && c == self.counts[best]);
        Ok((SemanticClass::ALL[best], is_tie))
    }
}

/// Which pipeline stage a gate policy applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateContext {
    Tracking,
    Mapping,
    Localization,
}

/// Context-specific partition of the class vocabulary into valid and rejected
/// sets, plus the evidence floor before a gate may open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatePolicy {
    pub context: GateContext,
    valid: [bool; NUM_CLASSES],
    pub min_observations: u32,
}

impl GatePolicy {
    pub fn new(
        context: GateContext,
        valid_classes: &[SemanticClass],
        min_observations: u32,
    ) -> Self {
        assert!(!valid_classes.is_empty(), "valid class set must be non-empty");
        assert!(min_observations >= 1);
        let mut valid = [false; NUM_CLASSES];
        for c in valid_classes {
            valid[*c as usize] = true;
        }
        GatePolicy {
            context,
            valid,
            min_observations,
        }
    }

    /// Policy that accepts every class (used for gating-off comparison runs).
    pub fn accept_all(context: GateContext) -> Self {
        GatePolicy::new(context, &SemanticClass::ALL, 1)
    }

    pub fn is_valid(&self, class: SemanticClass) -> bool {
        self.valid[class as usize]
    }

    pub fn valid_classes(&self) -> Vec<SemanticClass> {
        SemanticClass::ALL
            .iter()
            .copied()
            .filter(|c| self.is_valid(*c))
            .collect()
    }

    pub fn rejected_classes(&self) -> Vec<SemanticClass> {
        SemanticClass::ALL
            .iter()
            .copied()
            .filter(|c| !self.is_valid(*c))
            .collect()
    }
}

/// The boolean gate value attached to a landmark's factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionVariable {
    pub landmark_id: u64,
    /// Meaningful only when `decided` is true.
    pub value: bool,
    /// False when the histogram has not reached `min_observations`.
    pub decided: bool,
}

impl ConditionVariable {
    /// Gate semantics: undecided gates are closed, as are ties.
    pub fn is_open(&self) -> bool {
        self.decided && self.value
    }
}

/// Evaluate a landmark's condition variable from its label histogram.
///
/// Below the evidence floor the gate is undecided (treated as closed).
/// Otherwise the gate opens iff the mode class is valid and not tied.
pub fn decide_condition(
    landmark_id: u64,
    h: &LabelHistogram,
    policy: &GatePolicy,
) -> ConditionVariable {
    if h.total() < policy.min_observations {
        return ConditionVariable {
            landmark_id,
            value: false,
            decided: false,
        };
    }
    let (mode, is_tie) = h.mode().expect("non-empty histogram");
    ConditionVariable {
        landmark_id,
        value: policy.is_valid(mode) && !is_tie,
        decided: true,
    }
}

/// The empirically chosen class sets: tracking rejects non-static classes and
/// Sky; mapping and localization additionally reject Road.
pub fn default_policy(context: GateContext) -> GatePolicy {
    use SemanticClass::*;
    let valid: &[SemanticClass] = match context {
        GateContext::Tracking => &[
            Building,
            Pole,
            RoadMarking,
            Road,
            Pavement,
            Tree,
            SignSymbol,
            Fence,
        ],
        GateContext::Mapping | GateContext::Localization => &[
            Pole,
            RoadMarking,
            Pavement,
            SignSymbol,
            Tree,
            Building,
            Fence,
        ],
    };
    GatePolicy::new(context, valid, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hist(entries: &[(SemanticClass, u32)]) -> LabelHistogram {
        let mut h = LabelHistogram::new();
        for (c, n) in entries {
            for _ in 0..*n {
                h.accumulate(*c);
            }
        }
        h
    }

    #[test]
    fn accumulate_counts() {
        let mut h = LabelHistogram::new();
        h.accumulate(SemanticClass::Vehicle);
        assert_eq!(h.count(SemanticClass::Vehicle), 1);
        assert_eq!(h.total(), 1);
        h.accumulate(SemanticClass::Building);
        h.accumulate(SemanticClass::Building);
        assert_eq!(h.count(SemanticClass::Building), 2);
        assert_eq!(h.total(), 3);
    }

    #[test]
    fn accumulate_multiset() {
        let h = hist(&[
            (SemanticClass::Tree, 3),
            (SemanticClass::Vehicle, 2),
            (SemanticClass::Sky, 2),
        ]);
        assert_eq!(h.total(), 7);
        assert_eq!(h.count(SemanticClass::Tree), 3);
        assert_eq!(h.count(SemanticClass::Vehicle), 2);
        assert_eq!(h.count(SemanticClass::Sky), 2);
        assert_eq!(h.count(SemanticClass::Road), 0);
    }

    #[test]
    fn mode_basic_and_tie() {
        let h = hist(&[(SemanticClass::Tree, 3), (SemanticClass::Vehicle, 2)]);
        assert_eq!(h.mode().unwrap(), (SemanticClass::Tree, false));

        // Building=1 < Vehicle=9, so the tie returns Building.
        let h = hist(&[(SemanticClass::Building, 2), (SemanticClass::Vehicle, 2)]);
        assert_eq!(h.mode().unwrap(), (SemanticClass::Building, true));
    }

    #[test]
    fn mode_empty_is_error() {
        assert_eq!(
            LabelHistogram::new().mode(),
            Err(SemanticError::EmptyHistogram)
        );
    }

    #[test]
    fn mode_matches_bruteforce_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let mut counts = [0u32; NUM_CLASSES];
            for c in counts.iter_mut() {
                *c = rng.gen_range(0..6);
            }
            let h = LabelHistogram::from_counts(counts);
            if h.total() == 0 {
                assert!(h.mode().is_err());
                continue;
            }
            let (mode, is_tie) = h.mode().unwrap();
            let max = *counts.iter().max().unwrap();
            let argmax: Vec<usize> = (0..NUM_CLASSES).filter(|&i| counts[i] == max).collect();
            assert_eq!(mode as usize, argmax[0]);
            assert_eq!(is_tie, argmax.len() > 1);
        }
    }

    #[test]
    fn mode_is_order_invariant() {
        // Same multiset accumulated in different orders.
        let a = hist(&[(SemanticClass::Tree, 3), (SemanticClass::Road, 1)]);
        let mut b = LabelHistogram::new();
        b.accumulate(SemanticClass::Road);
        for _ in 0..3 {
            b.accumulate(SemanticClass::Tree);
        }
        assert_eq!(a, b);
        assert_eq!(a.mode(), b.mode());
    }

    #[test]
    fn decide_condition_paper_classes() {
        let mapping = default_policy(GateContext::Mapping);
        assert!(decide_condition(0, &hist(&[(SemanticClass::Pole, 5)]), &mapping).is_open());
        assert!(!decide_condition(0, &hist(&[(SemanticClass::Vehicle, 5)]), &mapping).is_open());

        let tracking = default_policy(GateContext::Tracking);
        assert!(decide_condition(0, &hist(&[(SemanticClass::Road, 4)]), &tracking).is_open());
        assert!(!decide_condition(0, &hist(&[(SemanticClass::Road, 4)]), &mapping).is_open());
    }

    #[test]
    fn decide_condition_needs_evidence() {
        let mapping = default_policy(GateContext::Mapping);
        let c = decide_condition(3, &hist(&[(SemanticClass::Pole, 1)]), &mapping);
        assert!(!c.decided);
        assert!(!c.is_open());
    }

    #[test]
    fn decide_condition_tie_is_closed() {
        let mapping = default_policy(GateContext::Mapping);
        let h = hist(&[(SemanticClass::Pole, 2), (SemanticClass::Tree, 2)]);
        let c = decide_condition(0, &h, &mapping);
        assert!(c.decided);
        assert!(!c.is_open());
    }

    #[test]
    fn default_policies_partition() {
        for ctx in [
            GateContext::Tracking,
            GateContext::Mapping,
            GateContext::Localization,
        ] {
            let p = default_policy(ctx);
            let mut all: Vec<_> = p.valid_classes();
            all.extend(p.rejected_classes());
            all.sort();
            assert_eq!(all, SemanticClass::ALL.to_vec());
            assert_eq!(p.min_observations, 2);
        }

        let mapping = default_policy(GateContext::Mapping);
        assert_eq!(mapping.valid_classes().len(), 7);
        assert!(mapping.is_valid(SemanticClass::Pole));
        assert!(!mapping.is_valid(SemanticClass::Road));

        let tracking = default_policy(GateContext::Tracking);
        assert!(tracking.is_valid(SemanticClass::Road));
        assert!(!tracking.is_valid(SemanticClass::Sky));
        assert!(!tracking.is_valid(SemanticClass::Vehicle));
    }

    #[test]
    fn decide_condition_monotone_in_mode_evidence() {
        // Adding another observation of the current non-tied mode class never
        // flips an open gate closed.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let policy = default_policy(GateContext::Mapping);
        for _ in 0..1000 {
            let mut h = LabelHistogram::new();
            for _ in 0..rng.gen_range(0..20) {
                let c = SemanticClass::ALL[rng.gen_range(0..NUM_CLASSES)];
                h.accumulate(c);
            }
            let before = decide_condition(7, &h, &policy);
            if !before.is_open() {
                continue;
            }
            let (mode, is_tie) = h.mode().unwrap();
            assert!(!is_tie);
            h.accumulate(mode);
            let after = decide_condition(7, &h, &policy);
            assert!(after.is_open());
        }
    }

    #[test]
    fn class_codes_roundtrip() {
        for c in SemanticClass::ALL {
            assert_eq!(SemanticClass::from_code(c.code()), Some(c));
            assert_eq!(SemanticClass::from_name(c.name()), Some(c));
        }
        assert_eq!(SemanticClass::from_code(12), None);
    }
}
