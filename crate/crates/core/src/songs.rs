//! Bundled songs: short public-domain melodies arranged for two three-finger
//! hands, left and right parts kept octaves apart.
//!
//! Parts are written in a small token language, one token per event:
//!
//! ```text
//! C5:5:i        C5 for a 5-step span, index finger, released for the last step
//! C5:10~:m      held for the whole 10-step span (no release gap)
//! C3+E3:10:r+i  two notes struck together (fingers listed in the same order)
//! r:5           rest
//! ```

use crate::error::{Error, Result};
use crate::score::{Finger, Hand, NoteEvent, PianoRoll, DEFAULT_SPLIT, MIDI_KEY_OFFSET};

pub struct SongSpec {
    pub name: &'static str,
    pub title: &'static str,
    pub left: &'static str,
    pub right: &'static str,
}

pub const TWINKLE: SongSpec = SongSpec {
    name: "twinkle",
    title: "Twinkle Twinkle",
    right: "C5:5:i C5:5:i G5:5:m G5:5:m A5:5:r A5:5:r G5:10:m \
            F5:5:r F5:5:r E5:5:m E5:5:m D5:5:i D5:5:i C5:10:i \
            G5:5:r G5:5:r F5:5:m F5:5:m E5:5:i E5:5:i D5:10:i \
            G5:5:r G5:5:r F5:5:m F5:5:m E5:5:i E5:5:i D5:10~:i",
    left: "C3+E3:10:r+i C3:10:r F3:10:i C3:10:r \
           D3:10:m C3:10:r G2:10:r C3:10:i \
           E3:10:i D3:10:m C3:10:r G2:10:r \
           E3:10:i D3:10:m C3:10:r G2:10~:r",
};

pub const ODE_TO_JOY: SongSpec = SongSpec {
    name: "ode",
    title: "Ode to Joy",
    right: "E5:5:m E5:5:m F5:5:r G5:5:r G5:5:r F5:5:m E5:5:i D5:5:i \
            C5:5:i C5:5:i D5:5:m E5:5:r E5:8:r D5:2:m D5:10:m \
            E5:5:m E5:5:m F5:5:r G5:5:r G5:5:r F5:5:m E5:5:i D5:5:i \
            C5:5:i C5:5:i D5:5:m E5:5:r D5:8:m C5:2:i C5:10:i \
            D5:5:m D5:5:m E5:5:r C5:5:i D5:5:m E5:3:m F5:2~:r E5:5:m C5:5:i \
            D5:5:m E5:3:m F5:2~:r E5:5:m D5:5:m C5:5:i D5:5:m G4:10:i \
            E5:5:m E5:5:m F5:5:r G5:5:r G5:5:r F5:5:m E5:5:i D5:5:i \
            C5:5:i C5:5:i D5:5:m E5:5:r D5:8:m C5:2:i C5:20~:i",
    left: "C3+E3:20:r+i G2:20:r C3:20:r G2:20:r \
           C3+E3:20:r+i G2:20:r C3:20:r G2+B2:10:r+i C3:10:r \
           G2:20:r C3:20:i G2:20:r G2+B2:20:r+i \
           C3+E3:20:r+i G2:20:r C3:20:r G2:10:r C3:20~:r",
};

pub const HOT_CROSS_BUNS: SongSpec = SongSpec {
    name: "buns",
    title: "Hot Cross Buns",
    right: "E5:5:r D5:5:m C5:10:i E5:5:r D5:5:m C5:10:i \
            C5:3:i C5:2:i C5:3:i C5:2:i D5:3:m D5:2:m D5:3:m D5:2:m E5:5:r D5:5:m C5:10:i \
            G5:5:r F5:5:m E5:10:i G5:5:r F5:5:m E5:10:i \
            E5:3:i E5:2:i E5:3:i E5:2:i F5:3:m F5:2:m F5:3:m F5:2:m G5:5:r F5:5:m E5:10~:i",
    left: "C3:20:r G2:20:r C3:10:r G2:10:r C3+E3:20:r+i \
           C3:20:i G2:20:r C3:10:i G2:10:r C3:20~:r",
};

pub const FUR_ELISE: SongSpec = SongSpec {
    name: "elise",
    title: "Fur Elise",
    right: "E6:3:r D#6:3:m E6:3:r D#6:3:m E6:3:r B5:3:i D6:3:m C6:3:i A5:9:i \
            r:3 C5:3:i E5:3:m A5:3:r B5:9:r r:3 E5:3:i G#5:3:m B5:3:r C6:9:r \
            r:3 E5:3:i E6:3:r D#6:3:m E6:3:r D#6:3:m E6:3:r B5:3:i D6:3:m C6:3:i A5:9:i \
            r:3 C5:3:i E5:3:m A5:3:r B5:9:r r:3 E5:3:i C6:3:r B5:3:m A5:9:i \
            r:4 \
            E6:3:r D#6:3:m E6:3:r D#6:3:m E6:3:r B5:3:i D6:3:m C6:3:i A5:9:i \
            r:3 C5:3:i E5:3:m A5:3:r B5:9:r r:3 E5:3:i G#5:3:m B5:3:r C6:9:r \
            r:3 E5:3:i E6:3:r D#6:3:m E6:3:r D#6:3:m E6:3:r B5:3:i D6:3:m C6:3:i A5:9:i \
            r:3 C5:3:i E5:3:m A5:3:r B5:9:r r:3 E5:3:i C6:3:r B5:3:m A5:13~:i",
    left: "r:24 A2:3:r E3:3:m A3:3:i r:9 E2:3:r E3:3:m G#3:3:i r:9 \
           A2:3:r E3:3:m A3:3:i r:27 \
           A2:3:r E3:3:m A3:3:i r:9 E2:3:r E3:3:m G#3:3:i r:9 A2:9:r r:19 \
           r:24 A2:3:r E3:3:m A3:3:i r:9 E2:3:r E3:3:m G#3:3:i r:9 \
           A2:3:r E3:3:m A3:3:i r:27 \
           A2:3:r E3:3:m A3:3:i r:9 E2:3:r E3:3:m G#3:3:i r:9 r:15 A2:13~:r",
};

pub const PRELUDE_IN_C: SongSpec = SongSpec {
    name: "prelude",
    title: "Prelude in C",
    right: "r:8 G4:4:i C5:4:m E5:4:r G4:4:i C5:4:m E5:4:r \
            r:8 G4:4:i C5:4:m E5:4:r G4:4:i C5:4:m E5:4:r \
            r:8 A4:4:i D5:4:m F5:4:r A4:4:i D5:4:m F5:4:r \
            r:8 A4:4:i D5:4:m F5:4:r A4:4:i D5:4:m F5:4:r \
            r:8 G4:4:i D5:4:m F5:4:r G4:4:i D5:4:m F5:4:r \
            r:8 G4:4:i D5:4:m F5:4:r G4:4:i D5:4:m F5:4:r \
            r:8 G4:4:i C5:4:m E5:4:r G4:4:i C5:4:m E5:4:r \
            r:8 G4:4:i C5:4:m E5:4:r G4:4:i C5:4:m E5:4:r \
            r:8 A4:4:i E5:4:m A5:4:r A4:4:i E5:4:m A5:4:r \
            r:8 A4:4:i E5:4:m A5:4:r A4:4:i E5:4:m A5:4:r \
            G4+C5+E5:10~:i+m+r",
    left: "C3:4:r E3:28:i C3:4:r E3:28:i \
           C3:4:r D3:28:m C3:4:r D3:28:m \
           B2:4:r D3:28:i B2:4:r D3:28:i \
           C3:4:r E3:28:i C3:4:r E3:28:i \
           A2:4:r E3:28:i A2:4:r E3:28:i \
           C3+E3:10~:r+i",
};

/// One finger, three keys; a smoke test for simulation training.
pub const TOY: SongSpec = SongSpec {
    name: "toy",
    title: "Toy",
    right: "C5:6:i r:2 D5:6:i r:2 E5:6:i r:2 D5:6:i r:2 C5:6:i r:2",
    left: "",
};

pub const ALL_SONGS: [&SongSpec; 5] = [&TWINKLE, &ODE_TO_JOY, &HOT_CROSS_BUNS, &FUR_ELISE, &PRELUDE_IN_C];

/// Expected length in steps of each bundled song, keyed by name.
pub const SONG_LENGTHS: [(&str, usize); 5] = [
    ("twinkle", 160),
    ("ode", 330),
    ("buns", 160),
    ("elise", 320),
    ("prelude", 330),
];

pub fn names() -> Vec<&'static str> {
    ALL_SONGS.iter().map(|s| s.name).collect()
}

/// Looks up and builds a bundled song.
pub fn bundled(name: &str) -> Result<PianoRoll> {
    let spec = ALL_SONGS
        .iter()
        .chain(std::iter::once(&&TOY))
        .find(|s| s.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown song '{name}'; bundled songs: {}, toy",
                names().join(", ")
            ))
        })?;
    spec.build()
}

impl SongSpec {
    pub fn build(&self) -> Result<PianoRoll> {
        let mut notes = parse_part(self.left, Hand::Left)?;
        notes.extend(parse_part(self.right, Hand::Right)?);
        PianoRoll::new(self.title, DEFAULT_SPLIT, notes)
    }
}

/// Parses a pitch name such as `C4`, `D#5` or `Bb2` into a key index (A0 = 0).
pub fn key_from_name(name: &str) -> Option<u8> {
    let mut chars = name.chars();
    let letter = chars.next()?.to_ascii_uppercase();
    let base: i32 = match letter {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        _ => return None,
    };
    let rest: String = chars.collect();
    let (accidental, octave) = match rest.chars().next()? {
        '#' => (1, &rest[1..]),
        'b' => (-1, &rest[1..]),
        _ => (0, rest.as_str()),
    };
    let octave: i32 = octave.parse().ok()?;
    let midi = 12 * (octave + 1) + base + accidental;
    let key = midi - i32::from(MIDI_KEY_OFFSET);
    u8::try_from(key).ok().filter(|k| *k < 88)
}

fn parse_part(part: &str, hand: Hand) -> Result<Vec<NoteEvent>> {
    let bad = |tok: &str, why: &str| Error::Validation(format!("song token '{tok}': {why}"));
    let mut notes = Vec::new();
    let mut step = 0usize;
    for tok in part.split_whitespace() {
        let fields: Vec<&str> = tok.split(':').collect();
        if fields.len() < 2 {
            return Err(bad(tok, "expected pitch:span[:finger]"));
        }
        let (span, legato) = match fields[1].strip_suffix('~') {
            Some(s) => (s, true),
            None => (fields[1], false),
        };
        let span: usize = span.parse().map_err(|_| bad(tok, "bad span"))?;
        if fields[0] == "r" {
            step += span;
            continue;
        }
        let sounding = if legato { span } else { span - 1 };
        if sounding == 0 {
            return Err(bad(tok, "span too short to sound"));
        }
        let pitches: Vec<&str> = fields[0].split('+').collect();
        let fingers: Vec<&str> = fields.get(2).map(|f| f.split('+').collect()).unwrap_or_default();
        if fingers.len() != pitches.len() {
            return Err(bad(tok, "one finger per pitch required"));
        }
        for (p, f) in pitches.iter().zip(fingers) {
            let key = key_from_name(p).ok_or_else(|| bad(tok, "bad pitch"))?;
            let finger: Finger = f.parse().map_err(|e: String| bad(tok, &e))?;
            notes.push(NoteEvent {
                key,
                onset: step,
                duration: sounding,
                hand,
                finger: Some(finger),
            });
        }
        step += span;
    }
    Ok(notes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pitch_names() {
        assert_eq!(key_from_name("A0"), Some(0));
        assert_eq!(key_from_name("C4"), Some(39));
        assert_eq!(key_from_name("D#5"), Some(54));
        assert_eq!(key_from_name("Eb5"), Some(54));
        assert_eq!(key_from_name("C8"), Some(87));
        assert_eq!(key_from_name("H2"), None);
    }

    #[test]
    fn bundled_lengths() {
        for (name, len) in SONG_LENGTHS {
            let roll = bundled(name).unwrap();
            assert_eq!(roll.num_steps(), len, "{name}");
            assert!(roll.is_fingered());
        }
    }

    #[test]
    fn toy_is_one_finger() {
        let roll = bundled("toy").unwrap();
        assert_eq!(roll.num_steps(), 37);
        assert!(roll.notes().iter().all(|n| n.finger == Some(Finger::Index) && n.hand == Hand::Right));
    }

    #[test]
    fn unknown_song_lists_choices() {
        let err = bundled("moonlight").unwrap_err().to_string();
        assert!(err.contains("twinkle"), "{err}");
    }
}
