//! Standard MIDI File (format 0) writer.

use super::{PianoRoll, TICKS_PER_MEASURE};

pub const MIDI_DIVISION: u16 = 480;
/// 120 BPM.
pub const TEMPO_US_PER_QUARTER: u32 = 500_000;
pub const MIDI_TICKS_PER_ROLL_TICK: u32 = MIDI_DIVISION as u32 * 4 / TICKS_PER_MEASURE;

const NOTE_ON: u8 = 0x90;

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 5];
    let mut i = buf.len() - 1;
    buf[i] = (value & 0x7f) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = 0x80 | (value & 0x7f) as u8;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Renders the roll as a single-track SMF on channel 1. Note-offs are
/// written as note-on with velocity 0 and sort before note-ons that share
/// their time, so repeated pitches re-trigger cleanly.
pub fn export_midi(roll: &PianoRoll) -> Vec<u8> {
    // (time, is_note_on, pitch, velocity)
    let mut events: Vec<(u32, bool, u8, u8)> = Vec::with_capacity(roll.notes().len() * 2);
    for note in roll.notes() {
        events.push((note.onset * MIDI_TICKS_PER_ROLL_TICK, true, note.pitch, note.velocity));
        events.push((note.end() * MIDI_TICKS_PER_ROLL_TICK, false, note.pitch, 0));
    }
    events.sort_by_key(|&(time, on, pitch, _)| (time, on, pitch));

    let mut track = Vec::new();
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x51, 0x03]);
    track.extend_from_slice(&TEMPO_US_PER_QUARTER.to_be_bytes()[1..]);

    let mut now = 0;
    for (time, _, pitch, velocity) in events {
        push_vlq(&mut track, time - now);
        track.extend_from_slice(&[NOTE_ON, pitch, velocity]);
        now = time;
    }
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&MIDI_DIVISION.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Note;

    fn vlq(value: u32) -> Vec<u8> {
        let mut out = Vec::new();
        push_vlq(&mut out, value);
        out
    }

    #[test]
    fn vlq_encoding() {
        assert_eq!(vlq(0), [0x00]);
        assert_eq!(vlq(0x7f), [0x7f]);
        assert_eq!(vlq(0x80), [0x81, 0x00]);
        assert_eq!(vlq(1920), [0x8f, 0x00]);
        assert_eq!(vlq(0x0fff_ffff), [0xff, 0xff, 0xff, 0x7f]);
    }

    #[test]
    fn empty_roll_has_tempo_and_end_only() {
        let bytes = export_midi(&PianoRoll::empty(1).unwrap());
        assert_eq!(
            bytes,
            [
                b'M', b'T', b'h', b'd', 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xe0, //
                b'M', b'T', b'r', b'k', 0, 0, 0, 11, //
                0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20, //
                0x00, 0xff, 0x2f, 0x00,
            ]
        );
    }

    #[test]
    fn whole_note_events() {
        let roll = PianoRoll::new(1, vec![Note::new(60, 0, 48, 100).unwrap()]).unwrap();
        let bytes = export_midi(&roll);
        let track = &bytes[22..];
        assert_eq!(&track[7..11], &[0x00, 0x90, 60, 100]);
        assert_eq!(&track[11..16], &[0x8f, 0x00, 0x90, 60, 0]);
        assert_eq!(&track[16..], &[0x00, 0xff, 0x2f, 0x00]);
    }
}
