//! Euclidean rhythm patterns.
//!
//! A rhythm `E(i, j, k)` spreads `i` pulses over `j` steps as evenly as
//! possible and then displaces the result `k` steps to the right. The
//! unrotated form always starts on a pulse, so `k` has a single meaning.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RhythmError {
    #[error("a rhythm needs at least one step")]
    ZeroSteps,
    #[error("{pulses} pulses do not fit in {steps} steps")]
    TooManyPulses { pulses: u32, steps: u32 },
    #[error("invalid pattern symbol {0:?} (expected 'x', 'X' or '.')")]
    BadSymbol(char),
}

/// Parameters of a Euclidean rhythm: `pulses` onsets over `steps` slots,
/// rotated right by `rotation` (any sign, taken mod `steps`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EuclideanSpec {
    pub pulses: u32,
    pub steps: u32,
    pub rotation: i64,
}

impl EuclideanSpec {
    pub fn new(pulses: u32, steps: u32, rotation: i64) -> Result<Self, RhythmError> {
        let spec = Self { pulses, steps, rotation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), RhythmError> {
        check_counts(self.pulses, self.steps)
    }

    /// Rotation reduced into `0..steps`.
    pub fn normalized_rotation(&self) -> u32 {
        if self.steps == 0 {
            return 0;
        }
        self.rotation.rem_euclid(self.steps as i64) as u32
    }
}

impl fmt::Display for EuclideanSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "E({},{},{})", self.pulses, self.steps, self.rotation)
    }
}

fn check_counts(pulses: u32, steps: u32) -> Result<(), RhythmError> {
    if steps == 0 {
        return Err(RhythmError::ZeroSteps);
    }
    if pulses > steps {
        return Err(RhythmError::TooManyPulses { pulses, steps });
    }
    Ok(())
}

/// An ordered cycle of pulse (`true`) and rest (`false`) slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pattern {
    slots: Vec<bool>,
}

impl Pattern {
    pub fn from_slots(slots: Vec<bool>) -> Self {
        Self { slots }
    }

    pub fn slots(&self) -> &[bool] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn pulse_count(&self) -> usize {
        self.slots.iter().filter(|&&s| s).count()
    }

    /// Whether the slot at `step` (wrapping around the cycle) is a pulse.
    pub fn is_pulse_at(&self, step: usize) -> bool {
        !self.slots.is_empty() && self.slots[step % self.slots.len()]
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &slot in &self.slots {
            f.write_str(if slot { "x" } else { "." })?;
        }
        Ok(())
    }
}

impl FromStr for Pattern {
    type Err = RhythmError;

    /// Accepts `x`/`X` for pulses and `.` for rests; whitespace is ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let slots = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                'x' | 'X' => Ok(true),
                '.' => Ok(false),
                other => Err(RhythmError::BadSymbol(other)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { slots })
    }
}

impl Serialize for Pattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Pattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Canonical Euclidean distribution of `pulses` over `steps`.
///
/// Pulse groups and rest groups are paired off repeatedly until at most
/// one remainder group is left, then concatenated. Slot 0 is a pulse
/// whenever `pulses >= 1`.
pub fn bjorklund(pulses: u32, steps: u32) -> Result<Pattern, RhythmError> {
    check_counts(pulses, steps)?;
    if pulses == 0 {
        return Ok(Pattern::from_slots(vec![false; steps as usize]));
    }

    let mut heads: Vec<Vec<bool>> = vec![vec![true]; pulses as usize];
    let mut tails: Vec<Vec<bool>> = vec![vec![false]; (steps - pulses) as usize];
    while tails.len() > 1 {
        let paired = heads.len().min(tails.len());
        let remainder = if heads.len() > paired {
            heads.split_off(paired)
        } else {
            tails.split_off(paired)
        };
        for (head, tail) in heads.iter_mut().zip(tails.drain(..)) {
            head.extend(tail);
        }
        tails = remainder;
    }

    let slots = heads.into_iter().chain(tails).flatten().collect();
    Ok(Pattern::from_slots(slots))
}

/// Rotates right: slot `n` of the input lands on slot `(n + k) mod len`.
pub fn rotate(pattern: &Pattern, k: i64) -> Pattern {
    let mut slots = pattern.slots.clone();
    if !slots.is_empty() {
        let shift = k.rem_euclid(slots.len() as i64) as usize;
        slots.rotate_right(shift);
    }
    Pattern::from_slots(slots)
}

pub fn euclidean(spec: &EuclideanSpec) -> Result<Pattern, RhythmError> {
    let base = bjorklund(spec.pulses, spec.steps)?;
    Ok(rotate(&base, spec.rotation))
}

pub fn pulse_positions(pattern: &Pattern) -> Vec<usize> {
    pattern
        .slots
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| s.then_some(i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(i: u32, j: u32, k: i64) -> String {
        euclidean(&EuclideanSpec::new(i, j, k).unwrap()).unwrap().to_string()
    }

    #[test]
    fn published_rhythms() {
        assert_eq!(e(5, 13, 0), "x..x.x..x.x..");
        assert_eq!(e(3, 7, 2), "..x.x.x");
        assert_eq!(e(4, 16, 0), "x...x...x...x...");
        assert_eq!(e(2, 5, 2), "..x.x");
    }

    #[test]
    fn degenerate_counts() {
        assert_eq!(bjorklund(7, 7).unwrap().to_string(), "xxxxxxx");
        assert_eq!(e(0, 4, 3), "....");
        assert_eq!(bjorklund(1, 1).unwrap().to_string(), "x");
        assert_eq!(bjorklund(0, 1).unwrap().to_string(), ".");
    }

    #[test]
    fn rejects_bad_counts() {
        assert_eq!(bjorklund(3, 0), Err(RhythmError::ZeroSteps));
        assert_eq!(
            bjorklund(5, 4),
            Err(RhythmError::TooManyPulses { pulses: 5, steps: 4 })
        );
        assert!(EuclideanSpec::new(9, 8, 0).is_err());
    }

    #[test]
    fn rotation_examples() {
        let p: Pattern = "x.x.x..".parse().unwrap();
        assert_eq!(rotate(&p, 2).to_string(), "..x.x.x");
        assert_eq!(rotate(&p, 0), p);
        assert_eq!(rotate(&p, 7), p);
        assert_eq!(rotate(&p, -5), rotate(&p, 2));
    }

    #[test]
    fn positions() {
        assert_eq!(pulse_positions(&"..x.x".parse().unwrap()), vec![2, 4]);
        assert!(pulse_positions(&"....".parse().unwrap()).is_empty());
        assert_eq!(
            pulse_positions(&"x..x.x..x.x..".parse().unwrap()),
            vec![0, 3, 5, 8, 10]
        );
    }

    #[test]
    fn parser_accepts_both_conventions() {
        let spaced: Pattern = ". . X . X".parse().unwrap();
        assert_eq!(spaced.to_string(), "..x.x");
        assert_eq!("x-.".parse::<Pattern>(), Err(RhythmError::BadSymbol('-')));
    }

    #[test]
    fn pattern_serializes_as_text() {
        let p = bjorklund(3, 8).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "\"x..x..x.\"");
        assert_eq!(serde_json::from_str::<Pattern>(&json).unwrap(), p);
    }

    proptest! {
        #[test]
        fn rotations_compose(i in 0u32..=20, extra in 0u32..12, a in -40i64..40, b in -40i64..40) {
            let p = bjorklund(i, i + extra.max(1)).unwrap();
            prop_assert_eq!(rotate(&rotate(&p, a), b), rotate(&p, a + b));
        }

        #[test]
        fn rotation_is_taken_mod_steps(i in 0u32..=16, extra in 1u32..16, k in -100i64..100) {
            let j = i + extra;
            let reduced = EuclideanSpec::new(i, j, k.rem_euclid(j as i64)).unwrap();
            let raw = EuclideanSpec::new(i, j, k).unwrap();
            prop_assert_eq!(euclidean(&raw).unwrap(), euclidean(&reduced).unwrap());
        }

        #[test]
        fn text_round_trip(slots in proptest::collection::vec(any::<bool>(), 0..40)) {
            let p = Pattern::from_slots(slots);
            prop_assert_eq!(p.to_string().parse::<Pattern>().unwrap(), p);
        }
    }
}
