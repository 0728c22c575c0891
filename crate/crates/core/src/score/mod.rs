//! Piano-roll model shared by the rhythm renderer, the corpus reader and
//! the VAE.
//!
//! Time is measured in ticks on a fixed grid of 48 ticks per 4/4 measure,
//! so sixteenths (3 ticks) and eighth-note triplets (4 ticks) are exact.

mod midi;
mod tokens;

pub use midi::{export_midi, MIDI_DIVISION, MIDI_TICKS_PER_ROLL_TICK, TEMPO_US_PER_QUARTER};
pub use tokens::{detokenize, tokenize, Token, TokenSequence, SEQUENCE_LENGTH, VOCAB_SIZE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::euclid::{euclidean, EuclideanSpec, RhythmError};

pub const TICKS_PER_MEASURE: u32 = 48;
/// One Euclidean step is a sixteenth note.
pub const STEP_TICKS: u32 = 3;
pub const STEPS_PER_MEASURE: u32 = TICKS_PER_MEASURE / STEP_TICKS;
/// Lowest pitch representable in a token sequence (C3).
pub const MIN_PITCH: u8 = 48;
/// Highest pitch representable in a token sequence (B6).
pub const MAX_PITCH: u8 = 95;
pub const DEFAULT_VELOCITY: u8 = 100;
/// C minor triad, C3 Eb3 G3.
pub const C_MINOR: [u8; 3] = [48, 51, 55];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("pitch {0} is outside the supported range {MIN_PITCH}..={MAX_PITCH}")]
    PitchOutOfRange(u8),
    #[error("note is invalid: {0}")]
    InvalidNote(String),
    #[error("roll length must be at least one measure")]
    ZeroLength,
    #[error("ticks_per_measure must be {TICKS_PER_MEASURE}, got {0}")]
    WrongResolution(u32),
    #[error("measure {index} is out of range for a roll of {length} measures")]
    MeasureOutOfRange { index: u32, length: u32 },
    #[error("roll is polyphonic at tick {0}")]
    Polyphonic(u32),
    #[error("token sequence must have {SEQUENCE_LENGTH} tokens, got {0}")]
    WrongSequenceLength(usize),
    #[error("illegal HOLD at index {0}")]
    IllegalHold(usize),
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error(transparent)]
    Rhythm(#[from] RhythmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Note {
    pub pitch: u8,
    pub onset: u32,
    pub duration: u32,
    pub velocity: u8,
}

impl Note {
    pub fn new(pitch: u8, onset: u32, duration: u32, velocity: u8) -> Result<Self, ScoreError> {
        let note = Self { pitch, onset, duration, velocity };
        note.validate()?;
        Ok(note)
    }

    pub fn end(&self) -> u32 {
        self.onset + self.duration
    }

    fn validate(&self) -> Result<(), ScoreError> {
        if self.pitch > 127 {
            return Err(ScoreError::InvalidNote(format!("pitch {} > 127", self.pitch)));
        }
        if self.duration == 0 {
            return Err(ScoreError::InvalidNote("zero duration".into()));
        }
        if !(1..=127).contains(&self.velocity) {
            return Err(ScoreError::InvalidNote(format!("velocity {}", self.velocity)));
        }
        Ok(())
    }
}

/// Notes on the 48-ticks-per-measure grid, kept sorted by `(onset, pitch)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRoll", into = "RawRoll")]
pub struct PianoRoll {
    length_measures: u32,
    notes: Vec<Note>,
}

#[derive(Serialize, Deserialize)]
struct RawRoll {
    ticks_per_measure: u32,
    length_measures: u32,
    notes: Vec<Note>,
}

impl TryFrom<RawRoll> for PianoRoll {
    type Error = ScoreError;

    fn try_from(raw: RawRoll) -> Result<Self, Self::Error> {
        if raw.ticks_per_measure != TICKS_PER_MEASURE {
            return Err(ScoreError::WrongResolution(raw.ticks_per_measure));
        }
        PianoRoll::new(raw.length_measures, raw.notes)
    }
}

impl From<PianoRoll> for RawRoll {
    fn from(roll: PianoRoll) -> Self {
        RawRoll {
            ticks_per_measure: TICKS_PER_MEASURE,
            length_measures: roll.length_measures,
            notes: roll.notes,
        }
    }
}

impl PianoRoll {
    pub fn new(length_measures: u32, mut notes: Vec<Note>) -> Result<Self, ScoreError> {
        if length_measures == 0 {
            return Err(ScoreError::ZeroLength);
        }
        let end = length_measures * TICKS_PER_MEASURE;
        for note in &notes {
            note.validate()?;
            if note.onset >= end {
                return Err(ScoreError::InvalidNote(format!(
                    "onset {} is past the roll end {end}",
                    note.onset
                )));
            }
        }
        notes.sort_by_key(|n| (n.onset, n.pitch));
        Ok(Self { length_measures, notes })
    }

    pub fn empty(length_measures: u32) -> Result<Self, ScoreError> {
        Self::new(length_measures, Vec::new())
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn length_measures(&self) -> u32 {
        self.length_measures
    }

    pub fn ticks_per_measure(&self) -> u32 {
        TICKS_PER_MEASURE
    }

    pub fn total_ticks(&self) -> u32 {
        self.length_measures * TICKS_PER_MEASURE
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }
}

/// One Euclidean rhythm voiced on a single chord tone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: EuclideanSpec,
    pub pitch: u8,
}

impl Layer {
    pub fn new(spec: EuclideanSpec, pitch: u8) -> Result<Self, ScoreError> {
        spec.validate()?;
        check_vocab_pitch(pitch)?;
        Ok(Self { spec, pitch })
    }
}

pub(crate) fn check_vocab_pitch(pitch: u8) -> Result<(), ScoreError> {
    if (MIN_PITCH..=MAX_PITCH).contains(&pitch) {
        Ok(())
    } else {
        Err(ScoreError::PitchOutOfRange(pitch))
    }
}

/// Plays every layer on the sixteenth grid. Each layer advances one slot
/// per step and wraps at its own cycle length, ignoring barlines.
pub fn render_polyrhythm(layers: &[Layer], length_measures: u32) -> Result<PianoRoll, ScoreError> {
    if length_measures == 0 {
        return Err(ScoreError::ZeroLength);
    }
    let total_steps = (length_measures * STEPS_PER_MEASURE) as usize;
    let mut notes = Vec::new();
    for layer in layers {
        check_vocab_pitch(layer.pitch)?;
        let pattern = euclidean(&layer.spec)?;
        for step in (0..total_steps).filter(|&s| pattern.is_pulse_at(s)) {
            notes.push(Note {
                pitch: layer.pitch,
                onset: step as u32 * STEP_TICKS,
                duration: STEP_TICKS,
                velocity: DEFAULT_VELOCITY,
            });
        }
    }
    notes.sort_by_key(|n| (n.onset, n.pitch));
    notes.dedup_by_key(|n| (n.onset, n.pitch));
    PianoRoll::new(length_measures, notes)
}

/// Lowest-note reduction with legato: at each onset tick only the lowest
/// pitch survives, and every survivor is held until the next surviving
/// onset (the last one until the end of the roll).
pub fn reduce_monophonic(roll: &PianoRoll) -> PianoRoll {
    // Notes are sorted by (onset, pitch), so the first note at each onset is the lowest.
    let mut survivors: Vec<Note> = Vec::new();
    for note in &roll.notes {
        if survivors.last().is_none_or(|last| last.onset != note.onset) {
            survivors.push(*note);
        }
    }
    let end = roll.total_ticks();
    let next_onsets: Vec<u32> = survivors
        .iter()
        .skip(1)
        .map(|n| n.onset)
        .chain(std::iter::once(end))
        .collect();
    for (note, next) in survivors.iter_mut().zip(next_onsets) {
        note.duration = next - note.onset;
    }
    PianoRoll {
        length_measures: roll.length_measures,
        notes: survivors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(i: u32, j: u32, k: i64, pitch: u8) -> Layer {
        Layer::new(EuclideanSpec::new(i, j, k).unwrap(), pitch).unwrap()
    }

    fn onsets(roll: &PianoRoll) -> Vec<u32> {
        roll.notes().iter().map(|n| n.onset).collect()
    }

    #[test]
    fn four_on_the_floor() {
        let roll = render_polyrhythm(&[layer(4, 16, 0, 48)], 1).unwrap();
        assert_eq!(onsets(&roll), vec![0, 12, 24, 36]);
        assert!(roll.notes().iter().all(|n| n.pitch == 48 && n.duration == 3 && n.velocity == 100));
    }

    #[test]
    fn short_cycle_phases_against_the_bar() {
        let roll = render_polyrhythm(&[layer(2, 5, 2, 51)], 1).unwrap();
        assert_eq!(onsets(&roll), vec![6, 12, 21, 27, 36, 42]);
    }

    #[test]
    fn no_layers_gives_empty_roll() {
        let roll = render_polyrhythm(&[], 2).unwrap();
        assert!(roll.is_empty());
        assert_eq!(roll.length_measures(), 2);
    }

    #[test]
    fn render_rejects_out_of_vocabulary_pitch() {
        let l = Layer { spec: EuclideanSpec::new(1, 4, 0).unwrap(), pitch: 30 };
        assert_eq!(render_polyrhythm(&[l], 1), Err(ScoreError::PitchOutOfRange(30)));
        assert!(Layer::new(EuclideanSpec::new(1, 4, 0).unwrap(), 96).is_err());
    }

    #[test]
    fn duplicate_layers_collapse() {
        let roll = render_polyrhythm(&[layer(4, 16, 0, 48), layer(4, 16, 0, 48)], 1).unwrap();
        assert_eq!(roll.notes().len(), 4);
    }

    #[test]
    fn lowest_note_wins() {
        let roll = PianoRoll::new(
            1,
            vec![Note::new(60, 0, 3, 100).unwrap(), Note::new(55, 0, 3, 100).unwrap()],
        )
        .unwrap();
        let mono = reduce_monophonic(&roll);
        assert_eq!(mono.notes(), &[Note::new(55, 0, 48, 100).unwrap()]);
    }

    #[test]
    fn single_note_held_to_end() {
        let roll = PianoRoll::new(1, vec![Note::new(60, 0, 3, 100).unwrap()]).unwrap();
        assert_eq!(reduce_monophonic(&roll).notes(), &[Note::new(60, 0, 48, 100).unwrap()]);
        let empty = PianoRoll::empty(1).unwrap();
        assert_eq!(reduce_monophonic(&empty), empty);
    }

    #[test]
    fn reduction_is_idempotent() {
        let roll = render_polyrhythm(
            &[layer(3, 7, 2, 48), layer(4, 16, 0, 51), layer(2, 5, 2, 55)],
            3,
        )
        .unwrap();
        let once = reduce_monophonic(&roll);
        assert_eq!(reduce_monophonic(&once), once);
    }

    #[test]
    fn roll_json_shape() {
        let roll = PianoRoll::new(1, vec![Note::new(60, 0, 48, 100).unwrap()]).unwrap();
        let json = serde_json::to_value(&roll).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "ticks_per_measure": 48,
                "length_measures": 1,
                "notes": [{"pitch": 60, "onset": 0, "duration": 48, "velocity": 100}]
            })
        );
        let back: PianoRoll = serde_json::from_value(json).unwrap();
        assert_eq!(back, roll);
        let bad = serde_json::json!({"ticks_per_measure": 96, "length_measures": 1, "notes": []});
        assert!(serde_json::from_value::<PianoRoll>(bad).is_err());
    }

    #[test]
    fn roll_validation() {
        assert_eq!(PianoRoll::empty(0), Err(ScoreError::ZeroLength));
        assert!(PianoRoll::new(1, vec![Note { pitch: 60, onset: 48, duration: 1, velocity: 1 }]).is_err());
        assert!(Note::new(60, 0, 0, 100).is_err());
        assert!(Note::new(60, 0, 1, 0).is_err());
        assert!(Note::new(128, 0, 1, 1).is_err());
    }
}
