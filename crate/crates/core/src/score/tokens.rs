use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{check_vocab_pitch, Note, PianoRoll, ScoreError, DEFAULT_VELOCITY, MAX_PITCH, MIN_PITCH, TICKS_PER_MEASURE};

pub const SEQUENCE_LENGTH: usize = TICKS_PER_MEASURE as usize;
/// REST, HOLD and one NOTE token per pitch in `MIN_PITCH..=MAX_PITCH`.
pub const VOCAB_SIZE: usize = 2 + (MAX_PITCH - MIN_PITCH) as usize + 1;

/// Per-tick symbol. Integer ids: 0 = REST, 1 = HOLD, `2 + p - 48` = NOTE(p).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Rest,
    Hold,
    Note(u8),
}

impl Token {
    pub fn id(self) -> usize {
        match self {
            Token::Rest => 0,
            Token::Hold => 1,
            Token::Note(p) => 2 + (p - MIN_PITCH) as usize,
        }
    }

    pub fn from_id(id: usize) -> Option<Self> {
        match id {
            0 => Some(Token::Rest),
            1 => Some(Token::Hold),
            i if i < VOCAB_SIZE => Some(Token::Note(MIN_PITCH + (i - 2) as u8)),
            _ => None,
        }
    }

    pub fn pitch(self) -> Option<u8> {
        match self {
            Token::Note(p) => Some(p),
            _ => None,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Rest => f.write_str("REST"),
            Token::Hold => f.write_str("HOLD"),
            Token::Note(p) => write!(f, "NOTE({p})"),
        }
    }
}

/// One measure as exactly 48 tokens. HOLD never opens the measure and
/// never follows REST.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<Token>) -> Result<Self, ScoreError> {
        if tokens.len() != SEQUENCE_LENGTH {
            return Err(ScoreError::WrongSequenceLength(tokens.len()));
        }
        let mut previous = Token::Rest;
        for (i, &token) in tokens.iter().enumerate() {
            match token {
                Token::Hold if previous == Token::Rest => return Err(ScoreError::IllegalHold(i)),
                Token::Note(p) => check_vocab_pitch(p)?,
                _ => {}
            }
            previous = token;
        }
        Ok(Self { tokens })
    }

    /// Builds a sequence, turning any HOLD at index 0 or after a REST into
    /// REST. Fails only on wrong length or out-of-range pitches.
    pub fn repaired(mut tokens: Vec<Token>) -> Result<Self, ScoreError> {
        let mut previous = Token::Rest;
        for token in tokens.iter_mut() {
            if *token == Token::Hold && previous == Token::Rest {
                *token = Token::Rest;
            }
            previous = *token;
        }
        Self::new(tokens)
    }

    pub fn rests() -> Self {
        Self { tokens: vec![Token::Rest; SEQUENCE_LENGTH] }
    }

    pub fn from_ids(ids: &[usize]) -> Result<Self, ScoreError> {
        let tokens = ids
            .iter()
            .map(|&id| Token::from_id(id).ok_or(ScoreError::UnknownToken(id as u32)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(tokens)
    }

    pub fn ids(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.id()).collect()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// `(tick, pitch)` of every NOTE token, in order.
    pub fn onsets(&self) -> impl Iterator<Item = (usize, u8)> + '_ {
        self.tokens
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.pitch().map(|p| (i, p)))
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for t in &self.tokens {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            match t {
                Token::Rest => f.write_str(".")?,
                Token::Hold => f.write_str("-")?,
                Token::Note(p) => write!(f, "{p}")?,
            }
        }
        Ok(())
    }
}

impl Serialize for TokenSequence {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.ids().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TokenSequence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let ids = Vec::<usize>::deserialize(deserializer)?;
        Self::from_ids(&ids).map_err(serde::de::Error::custom)
    }
}

/// Encodes one measure of a monophonic roll.
///
/// A note that is still sounding when the measure starts is struck again
/// on tick 0 and held from there, so the sequence never opens on HOLD.
pub fn tokenize(roll: &PianoRoll, measure_index: u32) -> Result<TokenSequence, ScoreError> {
    if measure_index >= roll.length_measures() {
        return Err(ScoreError::MeasureOutOfRange {
            index: measure_index,
            length: roll.length_measures(),
        });
    }
    for pair in roll.notes().windows(2) {
        if pair[0].end() > pair[1].onset {
            return Err(ScoreError::Polyphonic(pair[1].onset));
        }
    }

    let start = measure_index * TICKS_PER_MEASURE;
    let end = start + TICKS_PER_MEASURE;
    let mut tokens = vec![Token::Rest; SEQUENCE_LENGTH];
    for note in roll.notes().iter().filter(|n| n.onset < end && n.end() > start) {
        check_vocab_pitch(note.pitch)?;
        let from = note.onset.max(start);
        let to = note.end().min(end);
        tokens[(from - start) as usize] = Token::Note(note.pitch);
        for tick in from + 1..to {
            tokens[(tick - start) as usize] = Token::Hold;
        }
    }
    TokenSequence::new(tokens)
}

/// Decodes a measure back into a one-measure roll at the default velocity.
pub fn detokenize(sequence: &TokenSequence) -> PianoRoll {
    let mut notes: Vec<Note> = Vec::new();
    let mut sounding = false;
    for (tick, &token) in sequence.tokens().iter().enumerate() {
        match token {
            Token::Note(pitch) => {
                notes.push(Note {
                    pitch,
                    onset: tick as u32,
                    duration: 1,
                    velocity: DEFAULT_VELOCITY,
                });
                sounding = true;
            }
            Token::Hold if sounding => {
                if let Some(last) = notes.last_mut() {
                    last.duration += 1;
                }
            }
            Token::Hold | Token::Rest => sounding = false,
        }
    }
    PianoRoll::new(1, notes).expect("decoded notes lie inside one measure")
}
