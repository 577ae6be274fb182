//! Keyboard geometry and quasi-static key dynamics.
//!
//! Frame: `y` runs along the keyboard (low keys at small `y`), `x` is depth
//! measured from the fallboard toward the front edge of the white keys, `z`
//! is up with white key tops at `white_top_z`. Black keys occupy the region
//! near the fallboard, so their contact depth is the smaller `x`. Keys have no spring dynamics: depression follows the
//! deepest contacting fingertip instantly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeyColor {
    White,
    Black,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeySpec {
    pub index: u8,
    pub color: KeyColor,
    pub center_y: f64,
    pub half_width: f64,
    /// Nominal fingertip depth used when scripting the wrist.
    pub contact_x: f64,
    /// Depth span `[min, max]` over which the key surface can be pressed.
    pub depth_span: (f64, f64),
    pub top_z: f64,
}

impl KeySpec {
    pub fn contains(&self, tip: [f64; 3]) -> bool {
        (tip[1] - self.center_y).abs() <= self.half_width
            && tip[0] >= self.depth_span.0
            && tip[0] <= self.depth_span.1
            && tip[2] < self.top_z
    }
}

/// Standard dimensions; every field can be overridden from the `[keyboard]`
/// config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyboardDims {
    pub white_width: f64,
    pub black_half_width: f64,
    pub white_depth: (f64, f64),
    pub black_depth: (f64, f64),
    pub white_contact_x: f64,
    pub black_contact_x: f64,
    pub white_top_z: f64,
    pub black_top_z: f64,
    /// Fingertip travel from key top to full depression.
    pub travel: f64,
    /// Extra depth allowed below full depression before the clamp engages.
    pub clamp_margin: f64,
}

impl Default for KeyboardDims {
    fn default() -> Self {
        KeyboardDims {
            white_width: 0.0235,
            black_half_width: 0.006,
            white_depth: (0.0, 0.15),
            black_depth: (0.0, 0.095),
            white_contact_x: 0.14,
            black_contact_x: 0.06,
            white_top_z: 0.0,
            black_top_z: 0.012,
            travel: 0.01,
            clamp_margin: 0.002,
        }
    }
}

/// Pitch classes (relative to A) that are black keys.
const BLACK_FROM_A: [bool; 12] = [
    false, true, false, false, true, false, true, false, false, true, false, true,
];

pub fn is_black(key: u8) -> bool {
    BLACK_FROM_A[usize::from(key) % 12]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyboard {
    specs: Vec<KeySpec>,
    dims: KeyboardDims,
    travel: f64,
    floor_z: f64,
    max_half_width: f64,
}

impl Keyboard {
    /// Lays out `num_keys` keys starting at A0.
    ///
    /// White keys tile `y` edge to edge; each black key is centred on the
    /// boundary between its two white neighbours.
    pub fn build(num_keys: usize, dims: &KeyboardDims) -> Keyboard {
        assert!((12..=88).contains(&num_keys), "keyboard must have 12..=88 keys, got {num_keys}");
        let mut specs = Vec::with_capacity(num_keys);
        let mut whites_before = 0usize;
        for i in 0..num_keys {
            let index = i as u8;
            let spec = if is_black(index) {
                KeySpec {
                    index,
                    color: KeyColor::Black,
                    center_y: whites_before as f64 * dims.white_width,
                    half_width: dims.black_half_width,
                    contact_x: dims.black_contact_x,
                    depth_span: dims.black_depth,
                    top_z: dims.black_top_z,
                }
            } else {
                whites_before += 1;
                KeySpec {
                    index,
                    color: KeyColor::White,
                    center_y: (whites_before as f64 - 0.5) * dims.white_width,
                    half_width: dims.white_width / 2.0,
                    contact_x: dims.white_contact_x,
                    depth_span: dims.white_depth,
                    top_z: dims.white_top_z,
                }
            };
            specs.push(spec);
        }
        let lowest_top = specs.iter().map(|s| s.top_z).fold(f64::INFINITY, f64::min);
        let max_half_width = specs.iter().map(|s| s.half_width).fold(0.0, f64::max);
        Keyboard {
            specs,
            dims: dims.clone(),
            travel: dims.travel,
            floor_z: lowest_top - dims.travel - dims.clamp_margin,
            max_half_width,
        }
    }

    pub fn dims(&self) -> &KeyboardDims {
        &self.dims
    }

    pub fn specs(&self) -> &[KeySpec] {
        &self.specs
    }

    pub fn spec(&self, key: u8) -> &KeySpec {
        &self.specs[usize::from(key)]
    }

    pub fn num_keys(&self) -> usize {
        self.specs.len()
    }

    pub fn travel(&self) -> f64 {
        self.travel
    }

    pub fn floor_z(&self) -> f64 {
        self.floor_z
    }

    /// Lowest height a fingertip may reach: the key bed below full
    /// depression. Heights above the floor pass through unchanged.
    pub fn depth_clamp(&self, z: f64) -> f64 {
        z.max(self.floor_z)
    }

    /// Depression a single fingertip imposes on `key` (0 when not in contact).
    pub fn depression(&self, key: &KeySpec, tip: [f64; 3]) -> f64 {
        if key.contains(tip) {
            ((key.top_z - tip[2]) / self.travel).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    /// Keys whose lateral extent could contain `y`.
    fn candidates(&self, y: f64) -> impl Iterator<Item = &KeySpec> {
        // Centres are strictly increasing; the widest half-width bounds the search.
        let reach = self.max_half_width;
        let start = self.specs.partition_point(|s| s.center_y < y - reach);
        self.specs[start..]
            .iter()
            .take_while(move |s| s.center_y <= y + reach)
    }

    /// Advances key state from the current fingertip positions.
    ///
    /// A press event fires on each inactive→active transition and names the
    /// fingertip with the deepest contact on that key (lowest id on ties);
    /// release events carry no finger.
    pub fn step_keys(&self, fingertips: &[(usize, [f64; 3])], prev: &KeyState, threshold: f64) -> KeyStep {
        let n = self.specs.len();
        let mut depression = vec![0.0; n];
        let mut presser: Vec<Option<usize>> = vec![None; n];
        let mut contacts = Vec::new();
        for &(finger, tip) in fingertips {
            for key in self.candidates(tip[1]) {
                let d = self.depression(key, tip);
                if d <= 0.0 {
                    continue;
                }
                let k = usize::from(key.index);
                contacts.push((finger, key.index, d));
                let better = match presser[k] {
                    None => true,
                    Some(other) => d > depression[k] || (d == depression[k] && finger < other),
                };
                if better {
                    depression[k] = d;
                    presser[k] = Some(finger);
                }
            }
        }
        let active: Vec<bool> = depression.iter().map(|&d| d > 0.0 && d >= threshold).collect();
        let mut events = Vec::new();
        for k in 0..n {
            let was = prev.active.get(k).copied().unwrap_or(false);
            if active[k] && !was {
                events.push(PressEvent {
                    finger: presser[k],
                    key: k as u8,
                    on: true,
                });
            } else if !active[k] && was {
                events.push(PressEvent {
                    finger: None,
                    key: k as u8,
                    on: false,
                });
            }
        }
        contacts.retain(|&(_, key, _)| active[usize::from(key)]);
        KeyStep {
            state: KeyState { depression, active },
            events,
            contacts: contacts.into_iter().map(|(f, k, _)| (f, k)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KeyState {
    pub depression: Vec<f64>,
    pub active: Vec<bool>,
}

impl KeyState {
    pub fn released(num_keys: usize) -> KeyState {
        KeyState {
            depression: vec![0.0; num_keys],
            active: vec![false; num_keys],
        }
    }

    pub fn active_keys(&self) -> impl Iterator<Item = u8> + '_ {
        self.active
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(k, _)| k as u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PressEvent {
    pub finger: Option<usize>,
    pub key: u8,
    pub on: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyStep {
    pub state: KeyState,
    pub events: Vec<PressEvent>,
    /// `(finger, key)` for every active key each fingertip is holding down.
    pub contacts: Vec<(usize, u8)>,
}

/// Renders press events as `step finger key on|off` lines.
pub fn format_press_log(events: &[(usize, PressEvent)]) -> String {
    let mut out = String::from("# step finger key on|off\n");
    for (step, e) in events {
        let finger = e.finger.map_or_else(|| "-".to_string(), |f| f.to_string());
        let _ = writeln!(out, "{step} {finger} {} {}", e.key, if e.on { "on" } else { "off" });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn board() -> Keyboard {
        Keyboard::build(88, &KeyboardDims::default())
    }

    #[test]
    fn octave_has_seven_white_five_black() {
        let kb = Keyboard::build(12, &KeyboardDims::default());
        let whites = kb.specs().iter().filter(|s| s.color == KeyColor::White).count();
        assert_eq!((whites, 12 - whites), (7, 5));
    }

    #[test]
    fn full_board_layout() {
        let dims = KeyboardDims::default();
        let kb = board();
        assert_eq!(kb.num_keys(), 88);
        // 52 white keys span the board; closed form for first and last centre.
        assert!((kb.spec(0).center_y - dims.white_width / 2.0).abs() < 1e-15);
        assert!((kb.spec(87).center_y - 51.5 * dims.white_width).abs() < 1e-12);
        for w in kb.specs().windows(2) {
            assert!(w[1].center_y > w[0].center_y);
        }
        // Middle C (key 39) is the 24th white key.
        assert!((kb.spec(39).center_y - 23.5 * dims.white_width).abs() < 1e-12);
    }

    #[test]
    fn white_keys_tile_without_gap() {
        let kb = board();
        let whites: Vec<&KeySpec> = kb.specs().iter().filter(|s| s.color == KeyColor::White).collect();
        for w in whites.windows(2) {
            let gap = (w[1].center_y - w[1].half_width) - (w[0].center_y + w[0].half_width);
            assert!(gap.abs() < 1e-12, "gap {gap}");
        }
    }

    #[test]
    fn black_keys_sit_between_white_pairs() {
        let kb = board();
        for s in kb.specs().iter().filter(|s| s.color == KeyColor::Black) {
            let lo = kb.spec(s.index - 1);
            let hi = kb.spec(s.index + 1);
            assert_eq!((lo.color, hi.color), (KeyColor::White, KeyColor::White));
            assert!((s.center_y - (lo.center_y + lo.half_width)).abs() < 1e-12);
        }
    }

    #[test]
    fn full_press_fires_event() {
        let kb = board();
        let k = kb.spec(60);
        let tip = [k.contact_x, k.center_y, k.top_z - kb.travel()];
        let step = kb.step_keys(&[(2, tip)], &KeyState::released(88), 0.5);
        assert_eq!(step.state.depression[60], 1.0);
        assert!(step.state.active[60]);
        assert_eq!(step.events, vec![PressEvent { finger: Some(2), key: 60, on: true }]);
        // Holding the key produces no new event; lifting releases it.
        let held = kb.step_keys(&[(2, tip)], &step.state, 0.5);
        assert!(held.events.is_empty());
        let lifted = kb.step_keys(&[(2, [tip[0], tip[1], 0.05])], &held.state, 0.5);
        assert_eq!(lifted.events, vec![PressEvent { finger: None, key: 60, on: false }]);
    }

    #[test]
    fn hovering_fingertip_presses_nothing() {
        let kb = board();
        let k = kb.spec(60);
        let step = kb.step_keys(&[(0, [k.contact_x, k.center_y, k.top_z + 0.001])], &KeyState::released(88), 0.5);
        assert!(step.state.depression.iter().all(|&d| d == 0.0));
        assert!(step.events.is_empty());
    }

    #[test]
    fn straddling_white_black_pair_presses_both() {
        // Key 60 is A5, key 61 is A#5.
        let kb = board();
        let white = kb.spec(60);
        let black = kb.spec(61);
        assert_eq!((white.color, black.color), (KeyColor::White, KeyColor::Black));
        // y inside both half-widths, x inside both depth spans, below both tops.
        let y = black.center_y - black.half_width * 0.5;
        assert!((y - white.center_y).abs() <= white.half_width);
        let tip = [0.08, y, white.top_z - kb.travel()];
        let step = kb.step_keys(&[(1, tip)], &KeyState::released(88), 0.5);
        assert!(step.state.active[60] && step.state.active[61]);
        assert_eq!(step.events.len(), 2);
        assert!(step.events.iter().all(|e| e.finger == Some(1)));
    }

    #[test]
    fn out_of_board_depresses_nothing() {
        let kb = board();
        let step = kb.step_keys(&[(0, [0.03, -0.5, -0.01]), (1, [0.03, 5.0, -0.01])], &KeyState::released(88), 0.5);
        assert!(step.state.active.iter().all(|a| !a));
    }

    #[test]
    fn depth_clamp_floor() {
        let kb = board();
        let floor = kb.floor_z();
        assert!((floor - (-0.012)).abs() < 1e-15);
        assert_eq!(kb.depth_clamp(-1.0), floor);
        assert_eq!(kb.depth_clamp(0.05), 0.05);
        assert_eq!(kb.depth_clamp(floor), floor);
    }

    #[test]
    fn deepest_finger_gets_the_press() {
        let kb = board();
        let k = kb.spec(39);
        let shallow = [k.contact_x, k.center_y, -0.006];
        let deep = [k.contact_x, k.center_y + 0.002, -0.009];
        let step = kb.step_keys(&[(0, shallow), (1, deep)], &KeyState::released(88), 0.5);
        assert_eq!(step.events[0].finger, Some(1));
        assert!((step.state.depression[39] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn press_log_format() {
        let log = format_press_log(&[
            (3, PressEvent { finger: Some(1), key: 40, on: true }),
            (5, PressEvent { finger: None, key: 40, on: false }),
        ]);
        assert_eq!(log, "# step finger key on|off\n3 1 40 on\n5 - 40 off\n");
    }

    proptest! {
        #[test]
        fn depression_monotone_in_height(x in 0.0f64..0.15, y in 0.0f64..1.2, z1 in -0.02f64..0.03, dz in 0.0f64..0.02) {
            let kb = board();
            let lo = kb.step_keys(&[(0, [x, y, z1])], &KeyState::released(88), 0.5);
            let hi = kb.step_keys(&[(0, [x, y, z1 + dz])], &KeyState::released(88), 0.5);
            for k in 0..88 {
                prop_assert!(hi.state.depression[k] <= lo.state.depression[k]);
            }
        }

        #[test]
        fn press_events_are_geometrically_attributed(
            tips in proptest::collection::vec((0.0f64..0.15, 0.0f64..1.2, -0.015f64..0.02), 1..4)
        ) {
            let kb = board();
            let tips: Vec<(usize, [f64; 3])> = tips.into_iter().enumerate().map(|(i, (x, y, z))| (i, [x, y, z])).collect();
            let step = kb.step_keys(&tips, &KeyState::released(88), 0.5);
            for e in step.events.iter().filter(|e| e.on) {
                let tip = tips[e.finger.unwrap()].1;
                prop_assert!(kb.spec(e.key).contains(tip));
            }
            // Same fingertips, same state: the active set is a pure function of the input.
            let again = kb.step_keys(&tips, &KeyState::released(88), 0.5);
            prop_assert_eq!(again.state, step.state);
        }
    }
}
