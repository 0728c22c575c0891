use serde::{Deserialize, Serialize};

use crate::score::{TokenSequence, STEP_TICKS};

/// Metrical weight of each sixteenth step in a 4/4 bar: 5 on the
/// downbeat, 4 on beat three, 3 on beats two and four, 2 on off-beat
/// eighths and 1 on the remaining sixteenths.
pub const METRICAL_WEIGHTS: [u32; 16] = [5, 1, 2, 1, 3, 1, 2, 1, 4, 1, 2, 1, 3, 1, 2, 1];

pub const ATTRIBUTE_NAMES: [&str; 4] = [
    "note_density",
    "note_range",
    "rhythmic_complexity",
    "average_interval_jump",
];

/// The four measure attributes tied to latent dimensions 0..=3, in order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector {
    pub note_density: u32,
    pub note_range: u32,
    pub rhythmic_complexity: f64,
    pub average_interval_jump: f64,
}

impl AttributeVector {
    pub const ZERO: AttributeVector = AttributeVector {
        note_density: 0,
        note_range: 0,
        rhythmic_complexity: 0.0,
        average_interval_jump: 0.0,
    };

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.note_density as f64,
            self.note_range as f64,
            self.rhythmic_complexity,
            self.average_interval_jump,
        ]
    }
}

pub fn compute_attributes(sequence: &TokenSequence) -> AttributeVector {
    let onsets: Vec<(usize, u8)> = sequence.onsets().collect();
    if onsets.is_empty() {
        return AttributeVector::ZERO;
    }
    let density = onsets.len();
    let (lo, hi) = onsets
        .iter()
        .fold((u8::MAX, u8::MIN), |(lo, hi), &(_, p)| (lo.min(p), hi.max(p)));
    let syncopation: u32 = onsets
        .iter()
        .map(|&(tick, _)| 5 - METRICAL_WEIGHTS[tick / STEP_TICKS as usize])
        .sum();
    let jumps: u32 = onsets
        .windows(2)
        .map(|w| (w[1].1 as i32 - w[0].1 as i32).unsigned_abs())
        .sum();

    AttributeVector {
        note_density: density as u32,
        note_range: (hi - lo) as u32,
        rhythmic_complexity: syncopation as f64 / density as f64,
        average_interval_jump: if density < 2 { 0.0 } else { jumps as f64 / (density - 1) as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Token;

    fn seq(onsets: &[(usize, u8)]) -> TokenSequence {
        let mut tokens = vec![Token::Rest; 48];
        let mut sorted = onsets.to_vec();
        sorted.sort();
        for (i, &(tick, p)) in sorted.iter().enumerate() {
            let end = sorted.get(i + 1).map_or(48, |n| n.0);
            tokens[tick] = Token::Note(p);
            for t in tokens.iter_mut().take(end).skip(tick + 1) {
                *t = Token::Hold;
            }
        }
        TokenSequence::new(tokens).unwrap()
    }

    #[test]
    fn empty_measure() {
        assert_eq!(compute_attributes(&TokenSequence::rests()), AttributeVector::ZERO);
    }

    #[test]
    fn quarter_notes() {
        let a = compute_attributes(&seq(&[(0, 60), (12, 60), (24, 60), (36, 60)]));
        assert_eq!(a.note_density, 4);
        assert_eq!(a.note_range, 0);
        assert_eq!(a.average_interval_jump, 0.0);
        assert_eq!(a.rhythmic_complexity, 1.25);
    }

    #[test]
    fn single_note() {
        assert_eq!(
            compute_attributes(&seq(&[(0, 60)])),
            AttributeVector { note_density: 1, ..AttributeVector::ZERO }
        );
    }

    #[test]
    fn off_grid_onset_uses_containing_step() {
        // tick 4 sits inside step 1 (weight 1); tick 26 inside step 8 (weight 4)
        let a = compute_attributes(&seq(&[(4, 60), (26, 67)]));
        assert_eq!(a.rhythmic_complexity, (4.0 + 1.0) / 2.0);
        assert_eq!(a.note_range, 7);
        assert_eq!(a.average_interval_jump, 7.0);
    }

    #[test]
    fn interval_jumps_are_absolute() {
        let a = compute_attributes(&seq(&[(0, 60), (6, 67), (12, 62), (18, 62)]));
        assert_eq!(a.average_interval_jump, (7.0 + 5.0 + 0.0) / 3.0);
    }
}
