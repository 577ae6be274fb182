//! Piano rolls: the discrete-time task description.
//!
//! A [`PianoRoll`] is a list of [`NoteEvent`]s on a fixed 10 Hz grid together
//! with the per-step goal sets derived from them. Rolls are read from a
//! Standard MIDI File subset plus a line-oriented fingering sidecar and can be
//! written back out in the same two formats.
//!
//! Quantization maps note times to the nearest step, with exact half-step ties
//! rounding down. Hands are inferred from a split key: keys strictly below the
//! split belong to the left hand.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Steps per second of every roll.
pub const TIMESTEP_HZ: u32 = 10;

/// Number of keys on a full keyboard.
pub const NUM_KEYS: u8 = 88;

/// Default hand split: keys below this index are played by the left hand.
pub const DEFAULT_SPLIT: u8 = 44;

/// MIDI note number of key index 0 (A0).
pub const MIDI_KEY_OFFSET: u8 = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::Left, Hand::Right];

    pub fn index(self) -> usize {
        match self {
            Hand::Left => 0,
            Hand::Right => 1,
        }
    }

    /// Hand owning `key` under the given split.
    pub fn for_key(key: u8, split: u8) -> Hand {
        if key < split {
            Hand::Left
        } else {
            Hand::Right
        }
    }
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hand::Left => "L",
            Hand::Right => "R",
        })
    }
}

impl FromStr for Hand {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l" | "left" => Ok(Hand::Left),
            "r" | "right" => Ok(Hand::Right),
            other => Err(format!("unknown hand '{other}' (expected L or R)")),
        }
    }
}

/// The three actuated fingers of each hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Finger {
    Index,
    Middle,
    Ring,
}

impl Finger {
    pub const ALL: [Finger; 3] = [Finger::Index, Finger::Middle, Finger::Ring];

    pub fn index(self) -> usize {
        match self {
            Finger::Index => 0,
            Finger::Middle => 1,
            Finger::Ring => 2,
        }
    }

    pub fn from_index(i: usize) -> Finger {
        Finger::ALL[i]
    }

    /// Piano fingering number (thumb = 1).
    pub fn number(self) -> u8 {
        self.index() as u8 + 2
    }
}

impl fmt::Display for Finger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Finger::Index => "index",
            Finger::Middle => "middle",
            Finger::Ring => "ring",
        })
    }
}

impl FromStr for Finger {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "2" | "index" | "i" => Ok(Finger::Index),
            "3" | "middle" | "m" => Ok(Finger::Middle),
            "4" | "ring" | "r" => Ok(Finger::Ring),
            "1" | "thumb" | "5" | "pinky" => Err(format!(
                "finger '{s}' is not actuated; only index, middle and ring (2-4) may play"
            )),
            other => Err(format!("unknown finger '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoteEvent {
    pub key: u8,
    pub onset: usize,
    pub duration: usize,
    pub hand: Hand,
    pub finger: Option<Finger>,
}

impl NoteEvent {
    pub fn end(&self) -> usize {
        self.onset + self.duration
    }

    pub fn covers(&self, step: usize) -> bool {
        step >= self.onset && step < self.end()
    }
}

/// One key that should be sounding at a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Goal {
    pub key: u8,
    pub hand: Hand,
    pub finger: Option<Finger>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PianoRoll {
    title: String,
    split: u8,
    notes: Vec<NoteEvent>,
    goals: Vec<Vec<Goal>>,
}

impl PianoRoll {
    /// Builds a roll, validating every note and deriving per-step goals.
    ///
    /// Notes are stored sorted by `(onset, key)`. The hand of every note must
    /// agree with `split`.
    pub fn new(title: impl Into<String>, split: u8, mut notes: Vec<NoteEvent>) -> Result<Self> {
        if split == 0 || split >= NUM_KEYS {
            return Err(Error::Validation(format!("split key {split} outside 1..88")));
        }
        for n in &notes {
            if n.key >= NUM_KEYS {
                return Err(Error::Validation(format!(
                    "key {} at step {} outside 0..87",
                    n.key, n.onset
                )));
            }
            if n.duration == 0 {
                return Err(Error::Validation(format!(
                    "zero-length note key {} at step {}",
                    n.key, n.onset
                )));
            }
            if n.hand != Hand::for_key(n.key, split) {
                return Err(Error::Validation(format!(
                    "key {} at step {} assigned to hand {} but split {split} puts it in the other hand",
                    n.key, n.onset, n.hand
                )));
            }
        }
        notes.sort_by_key(|n| (n.onset, n.key));

        let mut last_end: HashMap<u8, (usize, usize)> = HashMap::new();
        for n in &notes {
            if let Some(&(onset, end)) = last_end.get(&n.key) {
                if n.onset < end {
                    return Err(Error::Validation(format!(
                        "overlapping notes on key {}: steps {}..{} and {}..{}",
                        n.key,
                        onset,
                        end,
                        n.onset,
                        n.end()
                    )));
                }
            }
            last_end.insert(n.key, (n.onset, n.end()));
        }

        let num_steps = notes.iter().map(NoteEvent::end).max().unwrap_or(0);
        let mut goals = vec![Vec::new(); num_steps];
        for n in &notes {
            for step in n.onset..n.end() {
                goals[step].push(Goal {
                    key: n.key,
                    hand: n.hand,
                    finger: n.finger,
                });
            }
        }
        for g in &mut goals {
            g.sort();
        }
        Ok(PianoRoll {
            title: title.into(),
            split,
            notes,
            goals,
        })
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn split(&self) -> u8 {
        self.split
    }

    pub fn num_steps(&self) -> usize {
        self.goals.len()
    }

    pub fn timestep_hz(&self) -> u32 {
        TIMESTEP_HZ
    }

    pub fn notes(&self) -> &[NoteEvent] {
        &self.notes
    }

    /// Goals at `step`; empty past the end of the roll.
    pub fn goals_at(&self, step: usize) -> &[Goal] {
        self.goals.get(step).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn goals(&self) -> &[Vec<Goal>] {
        &self.goals
    }

    pub fn hand_goals_at(&self, step: usize, hand: Hand) -> impl Iterator<Item = &Goal> {
        self.goals_at(step).iter().filter(move |g| g.hand == hand)
    }

    pub fn is_fingered(&self) -> bool {
        self.notes.iter().all(|n| n.finger.is_some())
    }

    /// Inclusive key range used by `hand`, if it plays at all.
    pub fn key_span(&self, hand: Hand) -> Option<(u8, u8)> {
        let keys = self.notes.iter().filter(|n| n.hand == hand).map(|n| n.key);
        let lo = keys.clone().min()?;
        let hi = keys.max()?;
        Some((lo, hi))
    }

    /// Copy of the roll restricted to one hand's notes; the step count is kept.
    pub fn hand_only(&self, hand: Hand) -> PianoRoll {
        let mut goals = self.goals.clone();
        for g in &mut goals {
            g.retain(|g| g.hand == hand);
        }
        PianoRoll {
            title: self.title.clone(),
            split: self.split,
            notes: self.notes.iter().copied().filter(|n| n.hand == hand).collect(),
            goals,
        }
    }
}

// ---------------------------------------------------------------------------
// Standard MIDI File reading
// ---------------------------------------------------------------------------

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::MidiParse {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| self.err("unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.err(format!("need {n} bytes, {} left", self.remaining())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(Error::MidiParse {
            offset: start,
            msg: "variable-length quantity longer than 4 bytes".into(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum RawKind {
    On,
    Off,
}

#[derive(Debug, Clone, Copy)]
struct RawNote {
    tick: u64,
    key: u8,
    kind: RawKind,
    /// Byte offset of the event, for error reporting.
    offset: usize,
    order: usize,
}

/// Decodes a type-0 or type-1 Standard MIDI File into an unfingered roll.
///
/// Velocity is ignored (a note-on with velocity 0 is a note-off). Notes are
/// quantized to the nearest 10 Hz step with ties rounding down; a note whose
/// quantized length is zero is stretched to one step.
pub fn parse_midi(bytes: &[u8], split: u8) -> Result<PianoRoll> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != b"MThd" {
        return Err(Error::MidiParse {
            offset: 0,
            msg: "missing MThd header".into(),
        });
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(r.err(format!("header length {header_len} < 6")));
    }
    let format_at = r.pos;
    let format = r.u16()?;
    let ntracks = r.u16()?;
    let division = r.u16()?;
    r.take(header_len - 6)?;
    if format > 1 {
        return Err(Error::MidiParse {
            offset: format_at,
            msg: format!("unsupported SMF format {format}"),
        });
    }
    if division & 0x8000 != 0 {
        return Err(Error::MidiParse {
            offset: format_at + 4,
            msg: "SMPTE time division is not supported".into(),
        });
    }
    if division == 0 {
        return Err(Error::MidiParse {
            offset: format_at + 4,
            msg: "zero ticks per quarter note".into(),
        });
    }

    let mut raw = Vec::new();
    let mut tempos: Vec<(u64, u32)> = Vec::new();
    let mut title: Option<String> = None;
    for track in 0..ntracks {
        let chunk_at = r.pos;
        let id = r.take(4)?;
        let len = r.u32()? as usize;
        if id != b"MTrk" {
            // Unknown chunks are skipped per the SMF rules.
            r.take(len).map_err(|_| Error::MidiParse {
                offset: chunk_at,
                msg: "truncated chunk".into(),
            })?;
            continue;
        }
        let body_start = r.pos;
        if r.remaining() < len {
            return Err(Error::MidiParse {
                offset: chunk_at,
                msg: format!("track {track} declares {len} bytes, {} available", r.remaining()),
            });
        }
        let body = &bytes[..body_start + len];
        let mut tr = Reader {
            bytes: body,
            pos: body_start,
        };
        parse_track(&mut tr, &mut raw, &mut tempos, &mut title)?;
        r.pos = body_start + len;
    }

    tempos.sort_by_key(|&(tick, _)| tick);
    raw.sort_by_key(|n| (n.tick, matches!(n.kind, RawKind::On), n.order));

    let mut open: HashMap<u8, (u64, usize)> = HashMap::new();
    let mut notes = Vec::new();
    for n in &raw {
        match n.kind {
            RawKind::On => {
                if open.contains_key(&n.key) {
                    return Err(Error::Validation(format!(
                        "overlapping identical notes: MIDI key {} re-struck while sounding (byte {})",
                        n.key, n.offset
                    )));
                }
                open.insert(n.key, (n.tick, n.offset));
            }
            RawKind::Off => {
                let Some((on_tick, on_offset)) = open.remove(&n.key) else {
                    continue;
                };
                let key = midi_to_key(n.key, on_offset)?;
                let onset = quantize(on_tick, &tempos, division);
                let end = quantize(n.tick, &tempos, division);
                notes.push(NoteEvent {
                    key,
                    onset,
                    duration: end.saturating_sub(onset).max(1),
                    hand: Hand::for_key(key, split),
                    finger: None,
                });
            }
        }
    }
    if let Some((&key, &(_, offset))) = open.iter().min_by_key(|(_, (_, o))| *o) {
        return Err(Error::MidiParse {
            offset,
            msg: format!("note-on for MIDI key {key} never released"),
        });
    }
    PianoRoll::new(title.unwrap_or_default(), split, notes)
}

fn midi_to_key(midi: u8, offset: usize) -> Result<u8> {
    midi.checked_sub(MIDI_KEY_OFFSET)
        .filter(|k| *k < NUM_KEYS)
        .ok_or(Error::MidiParse {
            offset,
            msg: format!("MIDI note {midi} outside the 88-key range"),
        })
}

fn parse_track(
    r: &mut Reader<'_>,
    raw: &mut Vec<RawNote>,
    tempos: &mut Vec<(u64, u32)>,
    title: &mut Option<String>,
) -> Result<()> {
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    while r.remaining() > 0 {
        tick += u64::from(r.vlq()?);
        let event_at = r.pos;
        let first = r.u8()?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            r.pos -= 1;
            running.ok_or_else(|| r.err("data byte without running status"))?
        };
        match status {
            0xff => {
                running = None;
                let kind = r.u8()?;
                let len = r.vlq()? as usize;
                let data = r.take(len)?;
                match kind {
                    0x51 => {
                        if len != 3 {
                            return Err(Error::MidiParse {
                                offset: event_at,
                                msg: format!("tempo event with {len} data bytes"),
                            });
                        }
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        if us == 0 {
                            return Err(Error::MidiParse {
                                offset: event_at,
                                msg: "zero tempo".into(),
                            });
                        }
                        tempos.push((tick, us));
                    }
                    0x03 if title.is_none() => {
                        *title = Some(String::from_utf8_lossy(data).into_owned());
                    }
                    0x2f => return Ok(()),
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.vlq()? as usize;
                r.take(len)?;
            }
            0x80..=0xef => {
                running = Some(status);
                let data_len = if matches!(status & 0xf0, 0xc0 | 0xd0) { 1 } else { 2 };
                let data = r.take(data_len)?;
                if let Some(&bad) = data.iter().find(|b| **b & 0x80 != 0) {
                    return Err(Error::MidiParse {
                        offset: event_at,
                        msg: format!("data byte {bad:#04x} has its high bit set"),
                    });
                }
                let kind = match status & 0xf0 {
                    0x90 if data[1] > 0 => Some(RawKind::On),
                    0x90 | 0x80 => Some(RawKind::Off),
                    _ => None,
                };
                if let Some(kind) = kind {
                    raw.push(RawNote {
                        tick,
                        key: data[0],
                        kind,
                        offset: event_at,
                        order: raw.len(),
                    });
                }
            }
            other => {
                return Err(Error::MidiParse {
                    offset: event_at,
                    msg: format!("unsupported status byte {other:#04x}"),
                })
            }
        }
    }
    Err(r.err("track ended without end-of-track meta event"))
}

/// Tick position to step index: nearest step, exact ties rounding down.
fn quantize(tick: u64, tempos: &[(u64, u32)], division: u16) -> usize {
    // Elapsed time as (microseconds * division), kept exact in integers.
    let mut acc: u128 = 0;
    let mut last_tick = 0u64;
    let mut tempo: u128 = 500_000;
    for &(t, us) in tempos {
        if t >= tick {
            break;
        }
        acc += u128::from(t - last_tick) * tempo;
        last_tick = t;
        tempo = u128::from(us);
    }
    acc += u128::from(tick - last_tick) * tempo;
    // step = ceil(seconds * HZ - 1/2) with seconds = acc / (division * 1e6).
    let denom = 2 * u128::from(division) * 1_000_000;
    let num = 2 * acc * u128::from(TIMESTEP_HZ);
    let half = u128::from(division) * 1_000_000;
    if num <= half {
        0
    } else {
        (num - half).div_ceil(denom) as usize
    }
}

// ---------------------------------------------------------------------------
// Standard MIDI File writing
// ---------------------------------------------------------------------------

/// Ticks per quarter note in emitted files.
const EMIT_DIVISION: u16 = 480;
/// 120 bpm: one quarter note is five steps.
const EMIT_TEMPO_US: u32 = 500_000;
const TICKS_PER_STEP: u64 = 96;

fn push_vlq(out: &mut Vec<u8>, mut v: u32) {
    let mut buf = [0u8; 4];
    let mut i = 3;
    buf[i] = (v & 0x7f) as u8;
    v >>= 7;
    while v > 0 {
        i -= 1;
        buf[i] = (v & 0x7f) as u8 | 0x80;
        v >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Writes a roll as a type-0 SMF. Fingering is not encoded; use
/// [`emit_fingering`] for the sidecar.
pub fn emit_roll(roll: &PianoRoll) -> Vec<u8> {
    // (tick, is_on, key, channel)
    let mut events: Vec<(u64, bool, u8, u8)> = Vec::with_capacity(roll.notes.len() * 2);
    for n in &roll.notes {
        let channel = n.hand.index() as u8;
        events.push((n.onset as u64 * TICKS_PER_STEP, true, n.key, channel));
        events.push((n.end() as u64 * TICKS_PER_STEP, false, n.key, channel));
    }
    events.sort_by_key(|&(tick, on, key, _)| (tick, on, key));

    let mut track = Vec::new();
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x03]);
    push_vlq(&mut track, roll.title.len() as u32);
    track.extend_from_slice(roll.title.as_bytes());
    push_vlq(&mut track, 0);
    let t = EMIT_TEMPO_US.to_be_bytes();
    track.extend_from_slice(&[0xff, 0x51, 0x03, t[1], t[2], t[3]]);
    let mut last = 0u64;
    for (tick, on, key, channel) in events {
        push_vlq(&mut track, (tick - last) as u32);
        last = tick;
        let midi = key + MIDI_KEY_OFFSET;
        if on {
            track.extend_from_slice(&[0x90 | channel, midi, 64]);
        } else {
            track.extend_from_slice(&[0x80 | channel, midi, 0]);
        }
    }
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&EMIT_DIVISION.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}

// ---------------------------------------------------------------------------
// Fingering sidecar
// ---------------------------------------------------------------------------

/// Applies a fingering sidecar to an unfingered (or fingered) roll.
///
/// Each non-comment line is `step key finger hand`, where `step` is the onset
/// step of the note. Every note must be annotated exactly once.
pub fn load_fingering(roll: &PianoRoll, sidecar: &str) -> Result<PianoRoll> {
    let mut assigned: BTreeMap<(usize, u8), Finger> = BTreeMap::new();
    for (lineno, line) in sidecar.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Fingering(format!(
                "line {lineno}: expected 'step key finger hand', got {} fields",
                fields.len()
            )));
        }
        let step: usize = fields[0]
            .parse()
            .map_err(|_| Error::Fingering(format!("line {lineno}: bad step '{}'", fields[0])))?;
        let key: u8 = fields[1]
            .parse()
            .map_err(|_| Error::Fingering(format!("line {lineno}: bad key '{}'", fields[1])))?;
        let finger: Finger = fields[2]
            .parse()
            .map_err(|e| Error::Fingering(format!("line {lineno}: {e}")))?;
        let hand: Hand = fields[3]
            .parse()
            .map_err(|e| Error::Fingering(format!("line {lineno}: {e}")))?;
        if hand != Hand::for_key(key, roll.split) {
            return Err(Error::Fingering(format!(
                "line {lineno}: key {key} lies in the {} hand's region, not {hand}",
                Hand::for_key(key, roll.split)
            )));
        }
        if assigned.insert((step, key), finger).is_some() {
            return Err(Error::Fingering(format!(
                "line {lineno}: duplicate assignment for key {key} at step {step}"
            )));
        }
    }

    let mut notes = roll.notes.clone();
    for n in &mut notes {
        match assigned.remove(&(n.onset, n.key)) {
            Some(f) => n.finger = Some(f),
            None => {
                return Err(Error::Fingering(format!(
                    "unannotated note at step {} (key {})",
                    n.onset, n.key
                )))
            }
        }
    }
    if let Some(((step, key), _)) = assigned.into_iter().next() {
        return Err(Error::Fingering(format!(
            "annotation for step {step} key {key} matches no note onset"
        )));
    }
    PianoRoll::new(roll.title.clone(), roll.split, notes)
}

/// Serializes a roll's fingering in the sidecar format read by [`load_fingering`].
pub fn emit_fingering(roll: &PianoRoll) -> String {
    let mut out = String::from("# step key finger hand\n");
    for n in &roll.notes {
        if let Some(f) = n.finger {
            out.push_str(&format!("{} {} {} {}\n", n.onset, n.key, f, n.hand));
        }
    }
    out
}
