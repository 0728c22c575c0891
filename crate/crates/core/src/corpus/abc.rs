//! A small ABC notation reader covering the session-transcription subset:
//! X/T/M/L/K headers, notes with octave marks, accidentals and length
//! modifiers, rests, bars, ties and broken rhythm. Decorations, grace notes,
//! chord symbols, slurs and repeat/ending marks are read past. Tuplets,
//! bracketed chords and multi-measure rests make the measure unusable.

use std::collections::HashMap;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Diagnostic, RejectReason};
use crate::score::{Token, TokenSequence, MAX_PITCH, MIN_PITCH, SEQUENCE_LENGTH, TICKS_PER_MEASURE};

type Frac = Ratio<u64>;

/// Unit note length from the `L:` field, as a fraction of a whole note.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitLength {
    pub numerator: u32,
    pub denominator: u32,
}

impl UnitLength {
    pub const EIGHTH: UnitLength = UnitLength { numerator: 1, denominator: 8 };

    fn parse(text: &str) -> Option<Self> {
        let (n, d) = text.trim().split_once('/')?;
        let numerator: u32 = n.trim().parse().ok()?;
        let denominator: u32 = d.trim().parse().ok()?;
        (numerator > 0 && denominator > 0).then_some(Self { numerator, denominator })
    }

    fn as_frac(self) -> Frac {
        Frac::new(self.numerator as u64, self.denominator as u64)
    }
}

impl fmt::Display for UnitLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbcTune {
    pub reference_number: u32,
    pub title: String,
    pub meter: String,
    pub unit_note_length: UnitLength,
    pub key: String,
    pub body: String,
}

impl AbcTune {
    pub fn is_common_time(&self) -> bool {
        is_common_time(&self.meter)
    }
}

fn is_common_time(meter: &str) -> bool {
    matches!(meter.trim(), "4/4" | "C")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AbcParse {
    pub tunes: Vec<AbcTune>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Decodes UTF-8 and parses. Invalid UTF-8 is the only fatal error.
pub fn parse_abc_bytes(bytes: &[u8]) -> Result<AbcParse, CorpusError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CorpusError::Decode(e.to_string()))?;
    Ok(parse_abc(text))
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) if i == 0 || !line[..i].ends_with('\\') => &line[..i],
        _ => line,
    }
}

fn field_line(line: &str) -> Option<(char, &str)> {
    let mut chars = line.chars();
    let key = chars.next()?;
    (key.is_ascii_alphabetic() && chars.next() == Some(':')).then(|| (key, line[2..].trim()))
}

/// Splits `text` into tunes at each `X:` line. Blocks with a bad reference
/// number or no `K:` field are reported and dropped.
pub fn parse_abc(text: &str) -> AbcParse {
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    let mut in_tune = false;
    for line in text.lines() {
        let trimmed = line.trim_end();
        if trimmed.starts_with("X:") {
            blocks.push(vec![trimmed]);
            in_tune = true;
        } else if trimmed.trim().is_empty() {
            in_tune = false;
        } else if in_tune {
            if let Some(block) = blocks.last_mut() {
                block.push(trimmed);
            }
        }
    }

    let mut parse = AbcParse::default();
    for block in blocks {
        match parse_block(&block) {
            Ok(tune) => parse.tunes.push(tune),
            Err((tune, message)) => parse.diagnostics.push(Diagnostic {
                tune,
                measure: None,
                reason: RejectReason::MalformedTune,
                message,
            }),
        }
    }
    parse
}

fn parse_block(lines: &[&str]) -> Result<AbcTune, (Option<u32>, String)> {
    let x_value = lines[0][2..].trim();
    let reference_number: u32 = x_value
        .parse()
        .map_err(|_| (None, format!("bad reference number {x_value:?}")))?;
    let fail = |message: String| (Some(reference_number), message);

    let mut title = None;
    let mut meter = None;
    let mut unit = None;
    let mut key = None;
    let mut body_start = lines.len();
    for (i, raw) in lines.iter().enumerate().skip(1) {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        match field_line(line) {
            Some(('T', v)) => {
                title.get_or_insert_with(|| v.to_string());
            }
            Some(('M', v)) => meter = Some(v.to_string()),
            Some(('L', v)) => {
                unit = Some(UnitLength::parse(v).ok_or_else(|| fail(format!("bad unit length {v:?}")))?)
            }
            Some(('K', v)) => {
                key = Some(v.to_string());
                body_start = i + 1;
                break;
            }
            Some(_) => {}
            None => return Err(fail(format!("music before the K: field: {line:?}"))),
        }
    }
    let key = key.ok_or_else(|| fail("missing K: field".into()))?;
    let body = lines[body_start..].join("\n");
    Ok(AbcTune {
        reference_number,
        title: title.unwrap_or_default(),
        meter: meter.unwrap_or_else(|| "none".into()),
        unit_note_length: unit.unwrap_or(UnitLength::EIGHTH),
        key,
        body,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Major,
    Minor,
    Dorian,
    Mixolydian,
}

/// Semitone adjustment per natural letter implied by a `K:` value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct KeySignature {
    offsets: [i32; 7],
}

const LETTERS: [char; 7] = ['C', 'D', 'E', 'F', 'G', 'A', 'B'];
const SHARP_ORDER: [char; 7] = ['F', 'C', 'G', 'D', 'A', 'E', 'B'];
const LETTER_FIFTHS: [i32; 7] = [0, 2, 4, -1, 1, 3, 5];

fn letter_index(letter: char) -> usize {
    LETTERS.iter().position(|&l| l == letter.to_ascii_uppercase()).expect("note letter")
}

impl KeySignature {
    pub(crate) fn parse(value: &str) -> Result<Self, String> {
        let value = value.trim();
        let head = value.split_whitespace().take(2).collect::<Vec<_>>();
        if head.is_empty() || head[0].eq_ignore_ascii_case("none") {
            return Ok(Self { offsets: [0; 7] });
        }
        let mut chars = head[0].chars().peekable();
        let tonic = chars.next().filter(|c| matches!(c.to_ascii_uppercase(), 'A'..='G'));
        let Some(tonic) = tonic else {
            return Err(format!("unsupported key {value:?}"));
        };
        let mut fifths = LETTER_FIFTHS[letter_index(tonic)];
        match chars.peek() {
            Some('#') => {
                fifths += 7;
                chars.next();
            }
            Some('b') => {
                fifths -= 7;
                chars.next();
            }
            _ => {}
        }
        let mut mode_text: String = chars.collect();
        if mode_text.is_empty() && head.len() > 1 && !head[1].contains('=') {
            mode_text = head[1].to_string();
        }
        let mode_text = mode_text.to_ascii_lowercase();
        let mode = match mode_text.get(..3.min(mode_text.len())).unwrap_or("") {
            "" | "maj" | "ion" => Mode::Major,
            "m" | "mi" | "min" | "aeo" => Mode::Minor,
            "dor" => Mode::Dorian,
            "mix" => Mode::Mixolydian,
            _ => return Err(format!("unsupported mode in key {value:?}")),
        };
        fifths += match mode {
            Mode::Major => 0,
            Mode::Mixolydian => -1,
            Mode::Dorian => -2,
            Mode::Minor => -3,
        };
        if !(-7..=7).contains(&fifths) {
            return Err(format!("key {value:?} needs more than seven accidentals"));
        }
        let mut offsets = [0; 7];
        if fifths > 0 {
            for &letter in &SHARP_ORDER[..fifths as usize] {
                offsets[letter_index(letter)] = 1;
            }
        } else {
            for &letter in SHARP_ORDER.iter().rev().take((-fifths) as usize) {
                offsets[letter_index(letter)] = -1;
            }
        }
        Ok(Self { offsets })
    }
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Note { pitch: i32, length: Frac },
    Rest { length: Frac },
}

impl Event {
    fn length_mut(&mut self) -> &mut Frac {
        match self {
            Event::Note { length, .. } | Event::Rest { length } => length,
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
enum Broken {
    #[default]
    None,
    /// `>` run: previous note lengthened, next shortened, by `n` dots.
    Forward(u32),
    /// `<` run: the reverse.
    Backward(u32),
}

fn broken_factors(dots: u32) -> (Frac, Frac) {
    let short = Frac::new(1, 1u64 << dots);
    (Frac::from_integer(2) - short, short)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureExtraction {
    pub measures: Vec<TokenSequence>,
    pub diagnostics: Vec<Diagnostic>,
}

struct MeasureBuilder<'a> {
    tune: u32,
    index: usize,
    events: Vec<Event>,
    accidentals: HashMap<(usize, i32), i32>,
    reject: Option<(RejectReason, String)>,
    tie_open: bool,
    broken: Broken,
    key: KeySignature,
    unit: Frac,
    meter_ok: bool,
    out: &'a mut MeasureExtraction,
}

impl MeasureBuilder<'_> {
    fn reject(&mut self, reason: RejectReason, message: impl Into<String>) {
        if self.reject.is_none() {
            self.reject = Some((reason, message.into()));
        }
    }

    fn push(&mut self, mut event: Event) {
        if let Broken::Forward(dots) | Broken::Backward(dots) = self.broken {
            let (long, short) = broken_factors(dots);
            let (prev_factor, next_factor) = match self.broken {
                Broken::Forward(_) => (long, short),
                _ => (short, long),
            };
            match self.events.last_mut() {
                Some(prev) => {
                    *prev.length_mut() *= prev_factor;
                    *event.length_mut() *= next_factor;
                }
                None => self.reject(RejectReason::Syntax, "broken rhythm without a preceding note"),
            }
            self.broken = Broken::None;
        }
        if self.tie_open {
            self.tie_open = false;
            if let (Event::Note { pitch, length }, Some(Event::Note { pitch: prev, length: prev_len })) =
                (event, self.events.last_mut())
            {
                if pitch == *prev {
                    *prev_len += length;
                    return;
                }
            }
        }
        self.events.push(event);
    }

    /// Closes the current measure. Empty measures between adjacent bar
    /// symbols are ignored.
    fn finish(&mut self) {
        self.tie_open = false;
        self.broken = Broken::None;
        self.accidentals.clear();
        let events = std::mem::take(&mut self.events);
        let reject = self.reject.take();
        if events.is_empty() && reject.is_none() {
            return;
        }
        let index = self.index;
        self.index += 1;
        let result = if let Some(rejection) = reject {
            Err(rejection)
        } else if !self.meter_ok {
            Err((RejectReason::Meter, "measure is not in 4/4".to_string()))
        } else {
            events_to_tokens(&events)
        };
        match result {
            Ok(sequence) => self.out.measures.push(sequence),
            Err((reason, message)) => self.out.diagnostics.push(Diagnostic {
                tune: Some(self.tune),
                measure: Some(index),
                reason,
                message,
            }),
        }
    }
}

fn events_to_tokens(events: &[Event]) -> Result<TokenSequence, (RejectReason, String)> {
    let mut tokens = Vec::with_capacity(SEQUENCE_LENGTH);
    let mut total = Frac::from_integer(0);
    for event in events {
        let (length, pitch) = match *event {
            Event::Note { pitch, length } => (length, Some(pitch)),
            Event::Rest { length } => (length, None),
        };
        total += length;
        let ticks = length * Frac::from_integer(TICKS_PER_MEASURE as u64);
        if !ticks.is_integer() || ticks.to_integer() == 0 {
            return Err((
                RejectReason::Resolution,
                format!("length {length} is not a whole number of ticks"),
            ));
        }
        let ticks = ticks.to_integer() as usize;
        match pitch {
            Some(p) => {
                if p < MIN_PITCH as i32 || p > MAX_PITCH as i32 {
                    return Err((RejectReason::PitchRange, format!("pitch {p} is out of range")));
                }
                tokens.push(Token::Note(p as u8));
                tokens.extend(std::iter::repeat_n(Token::Hold, ticks - 1));
            }
            None => tokens.extend(std::iter::repeat_n(Token::Rest, ticks)),
        }
    }
    if total != Frac::from_integer(1) {
        return Err((
            RejectReason::IncompleteMeasure,
            format!("measure lasts {total} of a whole note"),
        ));
    }
    TokenSequence::new(tokens).map_err(|e| (RejectReason::Syntax, e.to_string()))
}

fn read_length(chars: &[char], pos: &mut usize) -> Option<Frac> {
    let digits = |pos: &mut usize| {
        let start = *pos;
        while *pos < chars.len() && chars[*pos].is_ascii_digit() {
            *pos += 1;
        }
        (start < *pos).then(|| chars[start..*pos].iter().collect::<String>().parse::<u64>().ok())
    };
    let numerator = match digits(pos) {
        Some(Some(n)) => n,
        Some(None) => return None,
        None => 1,
    };
    let mut length = Frac::from_integer(numerator);
    while *pos < chars.len() && chars[*pos] == '/' {
        *pos += 1;
        let divisor = match digits(pos) {
            Some(Some(d)) => d,
            Some(None) => return None,
            None => 2,
        };
        if divisor == 0 {
            return None;
        }
        length /= Frac::from_integer(divisor);
    }
    Some(length)
}

fn skip_until(chars: &[char], pos: &mut usize, close: char) {
    while *pos < chars.len() && chars[*pos] != close {
        *pos += 1;
    }
    *pos = (*pos + 1).min(chars.len());
}

/// Slices a tune into complete 4/4 measures. Each rejected measure, and
/// a tune whose meter or key cannot be used, produces one diagnostic.
pub fn tune_to_measures(tune: &AbcTune) -> MeasureExtraction {
    let mut out = MeasureExtraction { measures: Vec::new(), diagnostics: Vec::new() };
    if !tune.is_common_time() {
        out.diagnostics.push(Diagnostic {
            tune: Some(tune.reference_number),
            measure: None,
            reason: RejectReason::Meter,
            message: format!("meter {:?} is not 4/4", tune.meter),
        });
        return out;
    }
    let key = match KeySignature::parse(&tune.key) {
        Ok(k) => k,
        Err(message) => {
            out.diagnostics.push(Diagnostic {
                tune: Some(tune.reference_number),
                measure: None,
                reason: RejectReason::Key,
                message,
            });
            return out;
        }
    };

    let mut builder = MeasureBuilder {
        tune: tune.reference_number,
        index: 0,
        events: Vec::new(),
        accidentals: HashMap::new(),
        reject: None,
        tie_open: false,
        broken: Broken::None,
        key,
        unit: tune.unit_note_length.as_frac(),
        meter_ok: true,
        out: &mut out,
    };

    for raw_line in tune.body.lines() {
        let line = strip_comment(raw_line).trim();
        if let Some((field, value)) = field_line(line) {
            apply_field(&mut builder, field, value);
            continue;
        }
        let chars: Vec<char> = line.chars().collect();
        scan_music(&mut builder, &chars);
    }
    builder.finish();
    out
}

fn apply_field(builder: &mut MeasureBuilder<'_>, field: char, value: &str) {
    match field {
        'K' => match KeySignature::parse(value) {
            Ok(key) => builder.key = key,
            Err(message) => builder.reject(RejectReason::Key, message),
        },
        'L' => match UnitLength::parse(value) {
            Some(unit) => builder.unit = unit.as_frac(),
            None => builder.reject(RejectReason::Syntax, format!("bad unit length {value:?}")),
        },
        'M' => builder.meter_ok = is_common_time(value),
        _ => {}
    }
}

fn scan_music(b: &mut MeasureBuilder<'_>, chars: &[char]) {
    let mut pos = 0;
    while pos < chars.len() {
        let c = chars[pos];
        match c {
            '|' | ':' => {
                while pos < chars.len() && matches!(chars[pos], '|' | ':' | ']' | '[') {
                    if chars[pos] == '[' && !chars.get(pos + 1).is_some_and(|n| n.is_ascii_digit()) {
                        break;
                    }
                    pos += 1;
                }
                while pos < chars.len() && (chars[pos].is_ascii_digit() || matches!(chars[pos], ',' | '-')) {
                    pos += 1;
                }
                b.finish();
            }
            '[' => {
                let next = chars.get(pos + 1).copied();
                let after = chars.get(pos + 2).copied();
                if next.is_some_and(|n| n.is_ascii_digit()) {
                    pos += 1;
                    while pos < chars.len() && (chars[pos].is_ascii_digit() || matches!(chars[pos], ',' | '-')) {
                        pos += 1;
                    }
                } else if next == Some('|') {
                    pos += 2;
                    b.finish();
                } else if next.is_some_and(|n| n.is_ascii_alphabetic()) && after == Some(':') {
                    let start = pos + 3;
                    skip_until(chars, &mut pos, ']');
                    let end = pos.saturating_sub(1).max(start);
                    let value: String = chars[start.min(end)..end].iter().collect();
                    apply_field(b, next.unwrap_or(' '), value.trim());
                } else {
                    b.reject(RejectReason::Chord, "bracketed chord");
                    skip_until(chars, &mut pos, ']');
                    read_length(chars, &mut pos);
                }
            }
            '"' => {
                pos += 1;
                skip_until(chars, &mut pos, '"');
            }
            '{' => skip_until(chars, &mut pos, '}'),
            '!' | '+' => {
                pos += 1;
                skip_until(chars, &mut pos, c);
            }
            '(' => {
                if chars.get(pos + 1).is_some_and(|n| n.is_ascii_digit()) {
                    b.reject(RejectReason::Tuplet, "tuplet");
                    pos += 1;
                    while pos < chars.len() && (chars[pos].is_ascii_digit() || chars[pos] == ':') {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            '-' => {
                b.tie_open = true;
                pos += 1;
            }
            '>' | '<' => {
                let mut dots = 0;
                while pos < chars.len() && chars[pos] == c {
                    dots += 1;
                    pos += 1;
                }
                b.broken = if c == '>' { Broken::Forward(dots) } else { Broken::Backward(dots) };
            }
            'z' | 'x' => {
                pos += 1;
                match read_length(chars, &mut pos) {
                    Some(len) => b.push(Event::Rest { length: b.unit * len }),
                    None => b.reject(RejectReason::Syntax, "bad rest length"),
                }
            }
            'Z' => {
                b.reject(RejectReason::MultiMeasureRest, "multi-measure rest");
                pos += 1;
                read_length(chars, &mut pos);
            }
            '^' | '_' | '=' | 'A'..='G' | 'a'..='g' => {
                if let Err(message) = read_note(b, chars, &mut pos) {
                    b.reject(RejectReason::Syntax, message);
                }
            }
            '&' => {
                b.reject(RejectReason::Chord, "voice overlay");
                pos += 1;
            }
            ')' | '~' | '.' | '`' | '\\' | '\'' | ',' | 'y' | 'u' | 'v' | 'H'..='Y' => pos += 1,
            c if c.is_whitespace() => pos += 1,
            other => {
                b.reject(RejectReason::Syntax, format!("unexpected symbol {other:?}"));
                pos += 1;
            }
        }
    }
}

fn read_note(b: &mut MeasureBuilder<'_>, chars: &[char], pos: &mut usize) -> Result<(), String> {
    let mut accidental: Option<i32> = None;
    while *pos < chars.len() && matches!(chars[*pos], '^' | '_' | '=') {
        let step = match chars[*pos] {
            '^' => 1,
            '_' => -1,
            _ => 0,
        };
        accidental = Some(match (accidental, step) {
            (_, 0) => 0,
            (Some(a), s) => a + s,
            (None, s) => s,
        });
        *pos += 1;
    }
    let Some(&letter) = chars.get(*pos).filter(|c| matches!(c, 'A'..='G' | 'a'..='g')) else {
        return Err("accidental without a note".into());
    };
    *pos += 1;
    let mut octave = if letter.is_ascii_lowercase() { 1 } else { 0 };
    while *pos < chars.len() && matches!(chars[*pos], '\'' | ',') {
        octave += if chars[*pos] == '\'' { 1 } else { -1 };
        *pos += 1;
    }
    let length = read_length(chars, pos).ok_or("bad note length")?;

    let index = letter_index(letter);
    const NATURAL: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
    let slot = (index, octave);
    let offset = match accidental {
        Some(a) => {
            b.accidentals.insert(slot, a);
            a
        }
        None => b.accidentals.get(&slot).copied().unwrap_or(b.key.offsets[index]),
    };
    let pitch = 60 + 12 * octave + NATURAL[index] + offset;
    b.push(Event::Note { pitch, length: b.unit * length });
    Ok(())
}

/// Writes a measure as ABC body text for `K:C` and `L:1/8`, spelling every
/// accidental explicitly, ending with a barline.
pub fn measure_to_abc(sequence: &TokenSequence) -> String {
    let mut out = String::new();
    let tokens = sequence.tokens();
    let mut i = 0;
    while i < tokens.len() {
        let mut run = 1;
        while i + run < tokens.len() && tokens[i + run] == Token::Hold {
            run += 1;
        }
        match tokens[i] {
            Token::Note(p) => {
                out.push_str(&pitch_to_abc(p));
                out.push_str(&length_to_abc(run));
                i += run;
            }
            _ => {
                let mut rests = 1;
                while i + rests < tokens.len() && tokens[i + rests] == Token::Rest {
                    rests += 1;
                }
                out.push('z');
                out.push_str(&length_to_abc(rests));
                i += rests;
            }
        }
    }
    out.push('|');
    out
}

/// A complete one-tune ABC document holding the given measures.
pub fn measures_to_abc(reference_number: u32, title: &str, measures: &[TokenSequence]) -> String {
    let mut out = format!("X:{reference_number}\nT:{title}\nM:4/4\nL:1/8\nK:C\n");
    for chunk in measures.chunks(4) {
        for m in chunk {
            out.push_str(&measure_to_abc(m));
        }
        out.push('\n');
    }
    out
}

fn pitch_to_abc(pitch: u8) -> String {
    const SPELLING: [(&str, char); 12] = [
        ("=", 'C'),
        ("^", 'C'),
        ("=", 'D'),
        ("^", 'D'),
        ("=", 'E'),
        ("=", 'F'),
        ("^", 'F'),
        ("=", 'G'),
        ("^", 'G'),
        ("=", 'A'),
        ("^", 'A'),
        ("=", 'B'),
    ];
    let (accidental, letter) = SPELLING[(pitch % 12) as usize];
    let octave = pitch as i32 / 12 - 5;
    let mut out = accidental.to_string();
    if octave >= 1 {
        out.push(letter.to_ascii_lowercase());
        out.extend(std::iter::repeat_n('\'', (octave - 1) as usize));
    } else {
        out.push(letter);
        out.extend(std::iter::repeat_n(',', (-octave) as usize));
    }
    out
}

/// Length in ticks relative to an eighth note (6 ticks).
fn length_to_abc(ticks: usize) -> String {
    let ratio = Frac::new(ticks as u64, 6);
    match (*ratio.numer(), *ratio.denom()) {
        (1, 1) => String::new(),
        (n, 1) => n.to_string(),
        (1, d) => format!("/{d}"),
        (n, d) => format!("{n}/{d}"),
    }
}
